"""Online stage: least-squares Petrov-Galerkin stepping on a (hyper-reduced)
residual, with Levenberg-Marquardt minimization over the latent coordinates.

One step minimizes the objective ||F(z)|| where F is either the full
residual of the decoded state (dense operator) or the restricted/reweighted
residual of a :class:`~hrom.hyperreduction.HyperReducedOperator`. The
Jacobian is assembled by forward differences in the latent directions, one
objective evaluation each, inside the compiled kernels.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autoencoder import decode, encode
from .errors import PreconditionError, ScheduleError, SolverError
from .fom import residual_args
from .hyperreduction import adaptive_update, rebind_operator

_DUMMY_FLAT = np.zeros(0)
_DUMMY_DIMS = np.zeros(1, dtype=np.int64)
_DUMMY_ACTS = np.zeros(0, dtype=np.int64)


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 30
    abs_tol: float = 1e-9
    rel_tol: float = 1e-8
    lambda0: float = 1e-3
    lambda_factor: float = 10.0
    fd_step: float = 1e-7
    on_failure: str = "abort"      # "abort" | "accept"

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise PreconditionError("tolerances must be positive")
        if self.on_failure not in ("abort", "accept"):
            raise PreconditionError("on_failure must be 'abort' or 'accept'")


@dataclass
class RomProblem:
    problem: object                # fom.ModelProblem
    basis: object                  # snapshots.ReducedBasis
    model: object = None           # autoencoder.AutoencoderModel | None (linear chart)
    operator: object = None        # HyperReducedOperator | None (dense)
    dt_rom: float = None
    r_h: int = None                # score-selected cell budget for adaptive updates
    settings: SolverSettings = field(default_factory=SolverSettings)
    schedule: object = None        # LocalManifoldSchedule | None

    def __post_init__(self):
        if self.dt_rom is None:
            self.dt_rom = self.problem.dt_ref
        if self.dt_rom <= 0:
            raise PreconditionError("dt_rom must be positive")


@dataclass
class StepDiagnostics:
    iterations: int
    objective_norm: float
    wall_ms: float
    converged: bool
    accepted_norms: list


@dataclass
class RomTrajectory:
    z: np.ndarray                  # (N+1, r) latent states
    times: np.ndarray
    diagnostics: list              # StepDiagnostics per step
    update_events: list = field(default_factory=list)
    switch_events: list = field(default_factory=list)
    failures: list = field(default_factory=list)


class _Workspace:
    """Kernel argument pack for one (chart, operator) pair."""

    def __init__(self, rom, mu, operator, model, basis):
        problem = rom.problem
        pcode, b0, b1, bc_code, q_l = residual_args(problem, mu)
        self.pcode, self.b0, self.b1, self.bc_code, self.q_l = pcode, b0, b1, bc_code, q_l
        self.model = model
        self.basis = basis
        self.operator = operator
        if model is not None:
            flat, dims, acts = model.decoder_pack
            self.use_mlp, self.dflat, self.ddims, self.dacts = 1, flat, dims, acts
        else:
            self.use_mlp = 0
            self.dflat, self.ddims, self.dacts = _DUMMY_FLAT, _DUMMY_DIMS, _DUMMY_ACTS
        if operator is None:
            self.dense = True
            self.wu = basis.wu
            self.dx = problem.mesh.cell_measures
        else:
            self.dense = False
            idx = operator.indexing
            self.wu = operator.wu_sub
            self.idx = idx
            self.mode_code, self.w_restr, self.gappy, self.ecsw = operator.mode_arrays()
            self.m = problem.n_cells
            self.s = idx.n_submesh

    def decode_prev(self, z_prev):
        y = self.model.decode_coords(z_prev) if self.model is not None else z_prev
        return kernels.decode_rows(self.wu, y)

    def objective(self, z, prev, dt):
        if self.dense:
            return kernels.dense_objective(
                z, self.use_mlp, self.dflat, self.ddims, self.dacts, self.wu, prev,
                self.pcode, dt, self.dx, self.b0, self.b1, self.bc_code, self.q_l)
        return kernels.submesh_objective(
            z, self.use_mlp, self.dflat, self.ddims, self.dacts, self.wu, prev,
            self.pcode, dt, self.idx.dx_cells, self.b0, self.b1, self.bc_code,
            self.q_l, self.idx.magic_cells, self.idx.pos, self.idx.lft,
            self.idx.rgt, self.m, self.s,
            self.mode_code, self.w_restr, self.gappy, self.ecsw)

    def normal_eqs(self, z, f0, h, prev, dt):
        if self.dense:
            return kernels.dense_normal_eqs(
                z, f0, h, self.use_mlp, self.dflat, self.ddims, self.dacts, self.wu,
                prev, self.pcode, dt, self.dx, self.b0, self.b1, self.bc_code, self.q_l)
        return kernels.submesh_normal_eqs(
            z, f0, h, self.use_mlp, self.dflat, self.ddims, self.dacts, self.wu,
            prev, self.pcode, dt, self.idx.dx_cells, self.b0, self.b1, self.bc_code,
            self.q_l, self.idx.magic_cells, self.idx.pos, self.idx.lft,
            self.idx.rgt, self.m, self.s,
            self.mode_code, self.w_restr, self.gappy, self.ecsw)


def _lm_minimize(ws, z0, prev, dt, settings, step_index):
    """Damped least-squares minimization of the step objective."""
    t0 = time.perf_counter()
    z = np.asarray(z0, dtype=np.float64).copy()
    f, status = ws.objective(z, prev, dt)
    if status != 0 or not np.isfinite(f).all():
        raise SolverError("objective undefined at the warm start",
                          step_index=step_index, best=z)
    fn = float(np.linalg.norm(f))
    lam = settings.lambda0
    accepted = [fn]
    converged = fn < settings.abs_tol
    iterations = 0
    tiny = 1e-30

    while not converged and iterations < settings.max_iterations:
        iterations += 1
        jtj, jtf, status = ws.normal_eqs(z, f, settings.fd_step, prev, dt)
        if status != 0:
            jtj, jtf, status = ws.normal_eqs(z, f, settings.fd_step * 1e-2, prev, dt)
            if status != 0:
                break
        # spherical damping keeps latent trajectories equivariant under
        # orthogonal changes of the chart basis
        scale = max(float(np.trace(jtj)) / z.shape[0], tiny)
        diag = np.full(z.shape[0], scale)
        improved = False
        while lam < 1e14:
            dz, ok = kernels.damped_solve(jtj, diag, lam, jtf)
            if not ok:
                lam *= settings.lambda_factor
                continue
            f_try, st = ws.objective(z + dz, prev, dt)
            if st == 0:
                fn_try = float(np.linalg.norm(f_try))
                if np.isfinite(fn_try) and fn_try < fn:
                    z = z + dz
                    rel_decrease = (fn - fn_try) / max(fn, tiny)
                    f, fn = f_try, fn_try
                    accepted.append(fn)
                    lam = max(lam / settings.lambda_factor, 1e-14)
                    improved = True
                    if fn < settings.abs_tol or rel_decrease < settings.rel_tol:
                        converged = True
                    break
            lam *= settings.lambda_factor
        if not improved:
            # no admissible decrease at any damping: treat as converged-in-place
            converged = fn < settings.abs_tol
            break

    wall_ms = (time.perf_counter() - t0) * 1e3
    diag = StepDiagnostics(iterations=iterations, objective_norm=fn,
                           wall_ms=wall_ms, converged=bool(converged),
                           accepted_norms=accepted)
    return z, diag


def solve_step(rom, mu, z_prev, history, workspace=None, step_index=None):
    """One NM-LSPG step: minimize the operator objective warm-started at z_prev.

    ``history`` holds the previous latent state (implicit Euler). Raises
    :class:`SolverError` carrying the best iterate when the step does not
    converge and the failure policy is "abort".
    """
    ws = workspace or _Workspace(rom, mu, rom.operator, rom.model, rom.basis)
    prev = ws.decode_prev(np.asarray(history[0], dtype=np.float64))
    z, diag = _lm_minimize(ws, z_prev, prev, rom.dt_rom, rom.settings, step_index)
    if not diag.converged and rom.settings.on_failure == "abort":
        raise SolverError(
            f"step {step_index}: objective {diag.objective_norm:.3e} after "
            f"{diag.iterations} iterations", step_index=step_index, best=z)
    return z, diag


def solve_trajectory(rom, mu, u0, n_steps=None):
    """March the ROM from the encoded initial state; returns a RomTrajectory."""
    problem = rom.problem
    if n_steps is None:
        n_steps = int(round(problem.t_final_ref / rom.dt_rom))
    schedule = rom.schedule
    seg_idx = 0
    if schedule is not None:
        model, basis, operator = schedule.chart(0)
    else:
        model, basis, operator = rom.model, rom.basis, rom.operator

    z = encode(model, basis, np.asarray(u0, dtype=np.float64))
    r = z.shape[0]
    traj = RomTrajectory(z=np.empty((n_steps + 1, r)), times=np.empty(n_steps + 1),
                         diagnostics=[])
    traj.z[0] = z
    traj.times[0] = 0.0
    ws = _Workspace(rom, mu, operator, model, basis)

    for k in range(1, n_steps + 1):
        t_k = k * rom.dt_rom
        z_prev = traj.z[k - 1].copy()
        try:
            z_new, diag = solve_step(rom, mu, z_prev, [z_prev], workspace=ws,
                                     step_index=k)
        except SolverError as err:
            raise SolverError(str(err), step_index=k, best=err.best) from None
        if not diag.converged:
            traj.failures.append(k)
        traj.z[k] = z_new
        traj.times[k] = t_k
        traj.diagnostics.append(diag)

        if schedule is not None and seg_idx < len(schedule.switch_times) and \
                t_k >= schedule.switch_times[seg_idx] - 1e-12:
            pre_norm = diag.objective_norm
            z_switched, sdiag = switch_manifold(schedule, seg_idx, traj.z[k])
            seg_idx += 1
            model, basis, operator = schedule.chart(seg_idx)
            ws = _Workspace(rom, mu, operator, model, basis)
            f_post, st = ws.objective(z_switched, ws.decode_prev(z_switched),
                                      rom.dt_rom)
            post_norm = float(np.linalg.norm(f_post)) if st == 0 else np.nan
            traj.switch_events.append({"step": k, "time": t_k,
                                       "pre_norm": pre_norm, "post_norm": post_norm,
                                       "madds": sdiag["madds"]})
            traj.z[k] = z_switched

        period = operator.update_period if operator is not None else None
        if period and k % period == 0 and k >= 1:
            t_up = time.perf_counter()
            new_points = adaptive_update(model, basis, traj.z[k], traj.z[k - 1],
                                         rom.r_h or (ws.idx.n_magic - len(operator.forced)),
                                         operator.forced, problem)
            wall = (time.perf_counter() - t_up) * 1e3
            if new_points is None:
                traj.update_events.append({"step": k, "changed": False,
                                           "wall_ms": wall})
            else:
                operator = rebind_operator(operator, problem, basis, new_points.cells)
                ws = _Workspace(rom, mu, operator, model, basis)
                traj.update_events.append({"step": k, "changed": True,
                                           "wall_ms": wall,
                                           "cells": new_points.cells.copy(),
                                           "scores": new_points.score_history.copy()})
    return traj


def reconstruct(rom, trajectory, at=None, chart=None):
    """Decode requested trajectory states back to full states.

    Runs only after stepping has finished, never inside the loop. With a
    schedule, each instant is decoded through the chart active at its time.
    """
    idx = range(trajectory.z.shape[0]) if at is None else at
    out = []
    for i in idx:
        if rom.schedule is not None:
            model, basis, _ = rom.schedule.chart_at(trajectory.times[i])
        elif chart is not None:
            model, basis = chart
        else:
            model, basis = rom.model, rom.basis
        out.append(decode(model, basis, trajectory.z[i]))
    return np.asarray(out)


@dataclass
class LocalManifoldSchedule:
    """Ordered charts with validity intervals and offline change-of-basis maps."""

    charts: list                   # [(model, basis, operator), ...]
    intervals: list                # [(t_start, t_end)] covering [0, T], overlapping
    switch_times: list             # one per adjacent pair, inside the overlap
    c12: list = None               # offline p x p change-of-basis matrices

    def __post_init__(self):
        n = len(self.charts)
        if len(self.intervals) != n or len(self.switch_times) != n - 1:
            raise ScheduleError("schedule lengths are inconsistent")
        for i, (a, b) in enumerate(self.intervals):
            if b <= a:
                raise ScheduleError(f"interval {i} is empty")
            if i > 0:
                pa, pb = self.intervals[i - 1]
                if a >= pb:
                    raise ScheduleError(f"intervals {i - 1} and {i} do not overlap")
                st = self.switch_times[i - 1]
                if not (a <= st <= pb):
                    raise ScheduleError(
                        f"switch time {st} outside overlap [{a}, {pb}]")
        if self.c12 is None:
            mats = []
            for i in range(n - 1):
                u1 = self.charts[i][1].u
                u2 = self.charts[i + 1][1].u
                mats.append(np.ascontiguousarray(u2.T @ u1))
            self.c12 = mats

    def chart(self, i):
        return self.charts[i]

    def chart_at(self, t):
        for i in range(len(self.charts) - 1):
            if t < self.switch_times[i]:
                return self.charts[i]
        return self.charts[-1]


def switch_manifold(schedule, from_index, z, current_full_hint=None):
    """Carry a latent state into the next chart via the offline basis overlap.

    Computes z' = encoder_2(C12 @ decoder_1(z)) with the precomputed p x p
    matrix C12; no d-dimensional object is touched. Returns (z', diag) where
    diag counts the multiply-adds actually performed.
    """
    if from_index >= len(schedule.charts) - 1:
        raise ScheduleError(f"no chart follows index {from_index}")
    c12 = schedule.c12[from_index]
    if c12 is None:
        raise ScheduleError(f"missing change-of-basis matrix at {from_index}")
    model1, _, _ = schedule.charts[from_index]
    model2, _, _ = schedule.charts[from_index + 1]
    z = np.asarray(z, dtype=np.float64)
    y1 = model1.decode_coords(z) if model1 is not None else z
    y2 = c12 @ y1
    z2 = model2.encode_coords(y2) if model2 is not None else y2
    madds = c12.shape[0] * c12.shape[1]
    if model1 is not None:
        madds += sum(w.shape[0] * w.shape[1] for w, _, _ in model1.decoder)
    if model2 is not None:
        madds += sum(w.shape[0] * w.shape[1] for w, _, _ in model2.encoder)
    return z2, {"madds": int(madds)}


def warm_start_norm(rom, mu, z, workspace=None):
    """Objective norm at z with itself as history (diagnostic helper)."""
    ws = workspace or _Workspace(rom, mu, rom.operator, rom.model, rom.basis)
    f, status = ws.objective(np.asarray(z, dtype=np.float64),
                             ws.decode_prev(np.asarray(z, dtype=np.float64)),
                             rom.dt_rom)
    return float(np.linalg.norm(f)) if status == 0 else np.nan
