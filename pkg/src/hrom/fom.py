"""Desk-scale 1D finite-volume full-order models.

Two parametric problems with moving shocks: viscous Burgers (one field,
Godunov flux) and compressible Euler (three fields, Rusanov flux, gamma-law
gas). Both are stepped with implicit Euler solved by a damped Newton
iteration, and both expose residual evaluation on the full mesh or on a
stencil-closed submesh with bit-identical values.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import kernels
from .errors import DataError, NonphysicalStateError, PreconditionError, SolverError

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class Mesh1d:
    n_cells: int
    cell_measures: np.ndarray
    periodic: bool = False

    def __post_init__(self):
        if self.cell_measures.shape != (self.n_cells,):
            raise PreconditionError("cell_measures length must equal n_cells")
        if not (self.cell_measures > 0).all():
            raise PreconditionError("all cell measures must be positive")

    @property
    def boundary_cells(self):
        return (0, self.n_cells - 1)

    @property
    def neighbor_map(self):
        m = self.n_cells
        left = np.arange(m) - 1
        right = np.arange(m) + 1
        if self.periodic:
            left[0] = m - 1
            right[m - 1] = 0
        else:
            left[0] = -1
            right[m - 1] = -1
        return np.stack([left, right], axis=1)


@dataclass(frozen=True)
class ModelProblem:
    kind: str                      # "burgers" | "euler1d"
    mesh: Mesh1d
    n_fields: int
    dt_ref: float
    t_final_ref: float
    mu_range: tuple
    nu: float = 0.0                # burgers viscosity
    gamma: float = 1.4             # euler ratio of specific heats
    bc: str = "inflow_outflow"     # burgers: "inflow_outflow" | "periodic"
    ic: dict = field(default_factory=dict)

    @property
    def n_cells(self):
        return self.mesh.n_cells

    @property
    def n_dofs(self):
        return self.n_fields * self.mesh.n_cells

    @property
    def field_names(self):
        return ("u",) if self.kind == "burgers" else ("rho", "mom", "ene")


def burgers_problem(n_cells=200, nu=2e-3, mu_range=(1.0, 2.0), dt_ref=None,
                    t_final=0.5, bc="inflow_outflow", step_position=0.2,
                    right_value=0.0, ic_kind="smoothstep", ic_width=None, length=1.0):
    """Parametric viscous Burgers: amplitude-mu step that shocks and travels.

    The default initial profile is a tanh step a couple of cells wide, so the
    t=0 state is resolvable on the mesh; ``ic_kind='step'`` gives the crisp
    discontinuity.
    """
    if bc not in ("inflow_outflow", "periodic"):
        raise PreconditionError(f"unknown burgers bc {bc!r}")
    dx = np.full(n_cells, length / n_cells)
    mesh = Mesh1d(n_cells=n_cells, cell_measures=dx, periodic=(bc == "periodic"))
    if dt_ref is None:
        dt_ref = t_final / 1600
    if ic_width is None:
        ic_width = 2.5 * length / n_cells
    ic = {"kind": ic_kind, "step_position": step_position, "right_value": right_value,
          "width": ic_width, "length": length}
    return ModelProblem(kind="burgers", mesh=mesh, n_fields=1, dt_ref=dt_ref,
                        t_final_ref=t_final, mu_range=mu_range, nu=nu, bc=bc, ic=ic)


def euler_problem(n_cells=200, gamma=7.0 / 5.0, mu_range=(2.0, 5.0), dt_ref=None,
                  t_final=0.15, diaphragm=0.5, right_state=(0.125, 0.0, 0.1),
                  length=1.0):
    """Parametric shock tube: left/right pressure ratio mu drives the shock."""
    dx = np.full(n_cells, length / n_cells)
    mesh = Mesh1d(n_cells=n_cells, cell_measures=dx, periodic=False)
    if dt_ref is None:
        dt_ref = t_final / 200
    ic = {"diaphragm": diaphragm, "right_state": tuple(right_state), "length": length}
    return ModelProblem(kind="euler1d", mesh=mesh, n_fields=3, dt_ref=dt_ref,
                        t_final_ref=t_final, mu_range=mu_range, gamma=gamma, ic=ic)


def cell_centers(problem):
    dx = problem.mesh.cell_measures
    edges = np.concatenate([[0.0], np.cumsum(dx)])
    return 0.5 * (edges[:-1] + edges[1:])


def _euler_conservative(rho, u, p, gamma):
    mom = rho * u
    ene = p / (gamma - 1.0) + 0.5 * rho * u * u
    return rho, mom, ene


def euler_left_state(problem, mu):
    """Conservative left (driver) state for parameter mu."""
    rho, mom, ene = _euler_conservative(1.0, 0.0, float(mu), problem.gamma)
    return np.array([rho, mom, ene])


def initial_state(problem, mu):
    x = cell_centers(problem)
    if problem.kind == "burgers":
        ic = problem.ic
        kind = ic.get("kind", "smoothstep")
        if kind == "step":
            u0 = np.where(x < ic["step_position"], float(mu), ic["right_value"])
        elif kind == "smoothstep":
            ramp = 0.5 * (1.0 - np.tanh((x - ic["step_position"]) / ic["width"]))
            u0 = ic["right_value"] + (float(mu) - ic["right_value"]) * ramp
        else:  # smooth hump, used by near-linear-regime studies
            u0 = float(mu) * np.exp(-80.0 * (x - 0.5) ** 2)
        return u0.astype(np.float64)
    rho_r, u_r, p_r = problem.ic["right_state"]
    left = x < problem.ic["diaphragm"]
    rho = np.where(left, 1.0, rho_r)
    u = np.where(left, 0.0, u_r)
    p = np.where(left, float(mu), p_r)
    rho, mom, ene = _euler_conservative(rho, u, p, problem.gamma)
    return np.concatenate([rho, mom, ene]).astype(np.float64)


def euler_primitives(problem, state):
    m = problem.n_cells
    rho = state[:m]
    mom = state[m:2 * m]
    ene = state[2 * m:]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = mom / rho
        p = (problem.gamma - 1.0) * (ene - 0.5 * mom * u)
    return rho, u, p


def validate_state(problem, state):
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (problem.n_dofs,):
        raise PreconditionError(
            f"state length {state.shape} != n_dofs {problem.n_dofs}")
    if not np.isfinite(state).all():
        raise DataError("state contains non-finite entries")
    if problem.kind == "euler1d":
        rho, _, p = euler_primitives(problem, state)
        if not ((rho > 0).all() and (p > 0).all()):
            raise NonphysicalStateError("euler state has rho <= 0 or p <= 0")
    return state


def residual_args(problem, mu):
    """Kernel argument pack (pcode, b0, b1, bc_code, qL) for this problem/mu."""
    if problem.kind == "burgers":
        bc_code = kernels.BC_PERIODIC if problem.bc == "periodic" else kernels.BC_INFLOW_OUTFLOW
        return (kernels.PCODE_BURGERS, problem.nu, float(mu), bc_code,
                np.zeros(3))
    return (kernels.PCODE_EULER, problem.gamma, 0.0, 0,
            euler_left_state(problem, mu))


def residual(problem, mu, state, history, dt):
    """Implicit-Euler discrete residual on the full mesh.

    ``history`` holds the single previous state the scheme needs.
    """
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    if len(history) != 1:
        raise PreconditionError("implicit Euler needs exactly one previous state")
    state = validate_state(problem, state)
    prev = np.asarray(history[0], dtype=np.float64)
    dx = problem.mesh.cell_measures
    pcode, b0, b1, bc_code, q_l = residual_args(problem, mu)
    if pcode == kernels.PCODE_BURGERS:
        return kernels.burgers_residual_full(state, prev, dt, dx, b0, b1, bc_code)
    out, status = kernels.euler_residual_full(state, prev, dt, dx, b0, q_l)
    if status != 0:
        raise NonphysicalStateError("euler residual hit rho <= 0 or p <= 0")
    return out


def stencil_of(problem, cells):
    """Closed +-1 stencil of the requested cells, truncated at boundaries."""
    m = problem.n_cells
    cells = np.asarray(cells, dtype=np.int64)
    if cells.size and (cells.min() < 0 or cells.max() >= m):
        raise PreconditionError(f"cell index out of range [0, {m})")
    nbr = problem.mesh.neighbor_map
    parts = [cells, nbr[cells, 0], nbr[cells, 1]]
    sten = np.unique(np.concatenate(parts))
    return sten[sten >= 0]


@dataclass(frozen=True)
class SubmeshIndexing:
    """Index arrays tying magic cells to their stencil-closed submesh."""

    magic_cells: np.ndarray        # sorted global cell indices, length k
    submesh_cells: np.ndarray      # sorted global cell indices, length s
    pos: np.ndarray                # submesh-local position of each magic cell
    lft: np.ndarray                # local position of left neighbor, -1 at boundary
    rgt: np.ndarray                # local position of right neighbor, -1 at boundary
    dx_cells: np.ndarray           # measures of the magic cells
    magic_dofs: np.ndarray         # field-major dof rows of magic cells, length k*c
    submesh_dofs: np.ndarray       # field-major dof rows of submesh cells, length s*c

    @property
    def n_magic(self):
        return self.magic_cells.shape[0]

    @property
    def n_submesh(self):
        return self.submesh_cells.shape[0]


def submesh_indexing(problem, magic_cells, submesh_cells=None):
    m = problem.n_cells
    magic = np.unique(np.asarray(magic_cells, dtype=np.int64))
    if magic.size == 0:
        raise PreconditionError("need at least one magic cell")
    if magic.min() < 0 or magic.max() >= m:
        raise PreconditionError(f"magic cell out of range [0, {m})")
    if submesh_cells is None:
        submesh_cells = stencil_of(problem, magic)
    sub = np.unique(np.asarray(submesh_cells, dtype=np.int64))
    local = {int(g): i for i, g in enumerate(sub)}
    nbr = problem.mesh.neighbor_map
    pos = np.empty(magic.size, dtype=np.int64)
    lft = np.empty(magic.size, dtype=np.int64)
    rgt = np.empty(magic.size, dtype=np.int64)
    for j, g in enumerate(magic):
        gi = int(g)
        if gi not in local:
            raise PreconditionError(f"submesh does not contain magic cell {gi}")
        pos[j] = local[gi]
        for a, arr in ((0, lft), (1, rgt)):
            nb = int(nbr[gi, a])
            if nb < 0:
                arr[j] = -1
            elif nb in local:
                arr[j] = local[nb]
            else:
                raise PreconditionError(
                    f"submesh misses cell {nb}, needed by magic cell {gi}")
    c = problem.n_fields
    magic_dofs = np.concatenate([f * m + magic for f in range(c)])
    submesh_dofs = np.concatenate([f * m + sub for f in range(c)])
    return SubmeshIndexing(magic_cells=magic, submesh_cells=sub, pos=pos, lft=lft,
                           rgt=rgt, dx_cells=problem.mesh.cell_measures[magic],
                           magic_dofs=magic_dofs, submesh_dofs=submesh_dofs)


def residual_on_submesh(problem, mu, restricted_state, restricted_history, dt, plan):
    """Residual rows of the magic cells, evaluated from submesh values only.

    Bit-identical to indexing the full residual at the magic dofs when the
    restricted inputs equal the restriction of the full inputs.
    """
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    s = plan.n_submesh
    c = problem.n_fields
    state = np.asarray(restricted_state, dtype=np.float64)
    prev = np.asarray(restricted_history[0], dtype=np.float64)
    if state.shape != (s * c,):
        raise PreconditionError(
            f"restricted state length {state.shape[0]} != submesh dofs {s * c}")
    pcode, b0, b1, bc_code, q_l = residual_args(problem, mu)
    if pcode == kernels.PCODE_BURGERS:
        return kernels.burgers_residual_cells(
            state, prev, dt, plan.dx_cells, b0, b1, bc_code,
            plan.magic_cells, plan.pos, plan.lft, plan.rgt, problem.n_cells)
    out, status = kernels.euler_residual_cells(
        state, prev, dt, plan.dx_cells, b0, q_l,
        plan.magic_cells, plan.pos, plan.lft, plan.rgt, problem.n_cells, s)
    if status != 0:
        raise NonphysicalStateError("euler submesh residual hit rho <= 0 or p <= 0")
    return out


def _raw_residual(problem, mu, state, prev, dt):
    """Kernel call without validation; returns (residual, ok)."""
    dx = problem.mesh.cell_measures
    pcode, b0, b1, bc_code, q_l = residual_args(problem, mu)
    if pcode == kernels.PCODE_BURGERS:
        r = kernels.burgers_residual_full(state, prev, dt, dx, b0, b1, bc_code)
        return r, bool(np.isfinite(r).all())
    r, status = kernels.euler_residual_full(state, prev, dt, dx, b0, q_l)
    return r, status == 0 and bool(np.isfinite(r).all())


def _jacobian_coloring(problem):
    """Cell groups safe to perturb together (stencil distance >= 3)."""
    m = problem.n_cells
    main = 3 * (m // 3)
    groups = [np.arange(col, main, 3, dtype=np.int64) for col in range(3)]
    groups += [np.array([i], dtype=np.int64) for i in range(main, m)]
    return [g for g in groups if g.size]


def sparse_residual_jacobian(problem, mu, state, prev, dt, r0=None):
    """Finite-difference residual Jacobian as a CSC matrix (local stencils)."""
    m = problem.n_cells
    c = problem.n_fields
    d = c * m
    if r0 is None:
        r0, ok = _raw_residual(problem, mu, state, prev, dt)
        if not ok:
            raise NonphysicalStateError("cannot linearize at a nonphysical state")
    rows, cols, vals = [], [], []
    nbr = problem.mesh.neighbor_map
    for cells in _jacobian_coloring(problem):
        for g in range(c):
            dof = g * m + cells
            eps = 1.5e-8 * np.maximum(1.0, np.abs(state[dof]))
            pert = state.copy()
            pert[dof] += eps
            r1, ok = _raw_residual(problem, mu, pert, prev, dt)
            if not ok:
                raise NonphysicalStateError("nonphysical state during FD Jacobian")
            dr = (r1 - r0)
            for delta in (-1, 0, 1):
                if delta == 0:
                    tgt = cells
                else:
                    tgt = nbr[cells, 0 if delta < 0 else 1]
                valid = tgt >= 0
                for f in range(c):
                    rr = f * m + tgt[valid]
                    rows.append(rr)
                    cols.append(dof[valid])
                    vals.append(dr[rr] / eps[valid])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(d, d))


def _newton_solve(problem, mu, prev, dt, guess, step_index, tol=NEWTON_TOL):
    u = guess.copy()
    r, ok = _raw_residual(problem, mu, u, prev, dt)
    if not ok:
        raise SolverError("nonphysical initial Newton guess", step_index=step_index)
    rnorm = float(np.linalg.norm(r))
    for _ in range(NEWTON_MAX_ITER):
        if rnorm <= tol:
            return u
        jac = sparse_residual_jacobian(problem, mu, u, prev, dt, r0=r)
        delta = scipy.sparse.linalg.spsolve(jac, -r)
        alpha = 1.0
        while True:
            u_try = u + alpha * delta
            r_try, ok = _raw_residual(problem, mu, u_try, prev, dt)
            if ok:
                rnorm_try = float(np.linalg.norm(r_try))
                if rnorm_try < rnorm:
                    break
            alpha *= 0.5
            if alpha < 1e-12:
                raise SolverError(
                    f"Newton line search stalled at residual {rnorm:.3e}",
                    step_index=step_index, best=u)
        u, r, rnorm = u_try, r_try, rnorm_try
    raise SolverError(
        f"Newton did not reach {tol:.1e} in {NEWTON_MAX_ITER} iterations "
        f"(residual {rnorm:.3e})", step_index=step_index, best=u)


def solve_fom(problem, mu, dt=None, n_steps=None, tol=NEWTON_TOL):
    """March the full-order model; returns (states (N+1, d), times (N+1,)).

    Each implicit step is solved by damped Newton to the absolute residual
    tolerance ``tol``; the 1e-10 default is appropriate up to a few thousand
    degrees of freedom, beyond which the float64 noise floor may sit higher.
    """
    if dt is None:
        dt = problem.dt_ref
    if n_steps is None:
        n_steps = int(round(problem.t_final_ref / dt))
    u = validate_state(problem, initial_state(problem, mu))
    states = np.empty((n_steps + 1, problem.n_dofs))
    times = np.empty(n_steps + 1)
    states[0] = u
    times[0] = 0.0
    for k in range(1, n_steps + 1):
        u = _newton_solve(problem, mu, states[k - 1], dt, states[k - 1], k, tol=tol)
        states[k] = u
        times[k] = k * dt
    return states, times


def total_mass(problem, state):
    dx = problem.mesh.cell_measures
    m = problem.n_cells
    return float(sum((state[f * m:(f + 1) * m] * dx).sum()
                     for f in range(problem.n_fields)))
