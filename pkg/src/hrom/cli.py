"""Command-line harness: FOM sweeps, offline build, ROM runs, report merging.

Subcommands: ``fom``, ``build``, ``rom``, ``report``, ``select-points``.
Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 IO error. Failures
also leave a machine-readable ``error.json`` in the output directory.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import autoencoder as ae
from . import fom, hyperreduction as hri, reporting, rom as romm, snapshots
from .config import load_config
from .errors import ConfigError, HromError
from .linalg import randomized_svd

MANIFEST_NAME = "manifest.json"


def _ensure_outdir(cfg, out_override):
    outdir = out_override or cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    return outdir


def _snapshot_path(outdir, role, index):
    return os.path.join(outdir, f"snapshots_{role}_{index:03d}.bin")


def _fom_one(args):
    cfg_path, overrides, mu = args
    cfg = load_config(cfg_path, overrides)
    problem = cfg.make_problem()
    states, times = fom.solve_fom(problem, mu)
    return states, times


def cmd_fom(cfg, cfg_path, outdir, threads=1, overrides=None):
    """Run the full-order sweeps and write binary snapshot files."""
    problem = cfg.make_problem()
    jobs = [("train", i, mu) for i, mu in enumerate(cfg.train_params)] + \
           [("test", i, mu) for i, mu in enumerate(cfg.test_params)]
    results = {}
    failures = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futs = {(role, i): pool.submit(_fom_one, (cfg_path, overrides, mu))
                    for role, i, mu in jobs}
            for (role, i, mu) in jobs:
                try:
                    results[(role, i)] = futs[(role, i)].result()
                except HromError as exc:
                    failures.append({"role": role, "mu": mu, "error": str(exc)})
    else:
        for role, i, mu in jobs:
            try:
                results[(role, i)] = fom.solve_fom(problem, mu)
            except HromError as exc:
                failures.append({"role": role, "mu": mu, "error": str(exc)})

    manifest = {"problem": cfg.problem_kind, "n_cells": cfg.n_cells,
                "n_fields": problem.n_fields, "dt_ref": cfg.dt_ref,
                "t_final": cfg.t_final, "subsample": cfg.subsample,
                "train": [], "test": [], "failures": failures}
    for role, params in (("train", cfg.train_params), ("test", cfg.test_params)):
        for i, mu in enumerate(params):
            if (role, i) not in results:
                continue
            states, times = results[(role, i)]
            keep = slice(None, None, cfg.subsample)
            path = _snapshot_path(outdir, role, i)
            snapshots.write_snapshot_file(
                path, states[keep], np.full(len(times[keep]), mu), times[keep],
                problem.n_fields, problem.n_cells)
            manifest[role].append({"mu": mu, "file": os.path.basename(path),
                                   "n_snapshots": len(times[keep])})
    with open(os.path.join(outdir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    train_failed = any(f["role"] == "train" for f in failures)
    return 3 if train_failed else 0


def _load_sweep(cfg, outdir, role):
    problem = cfg.make_problem()
    states_list, mu_list, t_list = [], [], []
    with open(os.path.join(outdir, MANIFEST_NAME)) as fh:
        manifest = json.load(fh)
    for entry in manifest[role]:
        data, mus, ts, c, m = snapshots.read_snapshot_file(
            os.path.join(outdir, entry["file"]))
        if (c, m) != (problem.n_fields, problem.n_cells):
            raise ConfigError(f"{entry['file']}: mesh mismatch with config")
        states_list.append(data)
        mu_list.append(mus)
        t_list.append(ts)
    return problem, np.vstack(states_list), np.concatenate(mu_list), np.concatenate(t_list)


def _basis_path(outdir):
    return os.path.join(outdir, "basis.npz")


def _save_basis(path, basis):
    np.savez(path, u=basis.u, w=basis.normalization.w, n=basis.normalization.n,
             v=basis.normalization.v, n_fields=basis.n_fields, n_cells=basis.n_cells)


def _load_basis(path):
    with np.load(path) as z:
        norm = snapshots.NormalizationVector(w=z["w"], n=z["n"], v=z["v"])
        return snapshots.ReducedBasis(u=z["u"], normalization=norm,
                                      n_fields=int(z["n_fields"]),
                                      n_cells=int(z["n_cells"]))


def residual_snapshots(problem, states, mus, dt):
    """Spatial-residual columns along a trajectory sweep.

    Evaluates the stepping residual with each saved state as both the trial
    and the history state, which cancels the time-derivative rows and leaves
    the flux/boundary content the online solver actually sees at warm start.
    """
    cols = np.empty_like(states)
    for j in range(states.shape[0]):
        cols[j] = fom.residual(problem, mus[j], states[j], [states[j]], dt)
    return cols


def cmd_build(cfg, outdir):
    """Offline stage: normalization, basis, autoencoder, point selection."""
    stage = "load-snapshots"
    try:
        problem, states, mus, ts = _load_sweep(cfg, outdir, "train")
        stage = "normalization"
        norm = snapshots.build_normalization(states, problem.mesh, problem.n_fields)
        sset = snapshots.assemble_snapshots(states, mus, ts, norm, problem.mesh,
                                            problem.n_fields)
        stage = "rsvd"
        basis, _ = snapshots.reduced_basis_from_snapshots(
            sset, cfg.r_rsvd, oversampling=cfg.oversampling, seed=cfg.basis_seed)
        _save_basis(_basis_path(outdir), basis)
        decay_rows = []
        for r in _decay_ranks(cfg.r_rsvd):
            sub = snapshots.ReducedBasis(u=basis.u[:, :r], normalization=norm,
                                         n_fields=problem.n_fields,
                                         n_cells=problem.n_cells)
            err = snapshots.reconstruction_errors(sub, sset)
            for f, name in enumerate(problem.field_names):
                decay_rows.append([r, "train", name,
                                   err["mean_rel_l2_per_field"][f],
                                   err["max_rel_l2_per_field"][f]])
            decay_rows.append([r, "train", "total", err["mean_rel_l2"],
                               err["max_rel_l2"]])
        reporting.write_decay(os.path.join(outdir, "rsvd_decay.csv"), decay_rows)

        stage = "autoencoder"
        y = basis.u.T @ sset.matrix
        tcfg = ae.TrainingConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                                 learning_rate=cfg.learning_rate, seed=cfg.train_seed,
                                 validation_fraction=cfg.validation_fraction,
                                 latent_dim=cfg.latent_dim, hidden=cfg.hidden)
        model, history = ae.train_autoencoder(y, tcfg)
        ae.save_model(os.path.join(outdir, "model.bin"), model)
        reporting.write_rows(os.path.join(outdir, "training_history.csv"),
                             ["epoch", "train_loss", "val_loss"],
                             [[i, tr, vl] for i, (tr, vl) in enumerate(
                                 zip(history["train_loss"], history["val_loss"]))])

        if cfg.variant.lower() == "dense":
            return 0

        stage = "hyper-reduction-basis"
        hr_basis, hr_w = basis.u, norm.w
        if cfg.mode == "RB":
            gcols = residual_snapshots(problem, states, mus, cfg.dt_rom)
            g_norm = snapshots.build_normalization(gcols, problem.mesh,
                                                   problem.n_fields)
            res = randomized_svd(np.ascontiguousarray((gcols / g_norm.w).T),
                                 cfg.residual_basis_rank,
                                 oversampling=cfg.oversampling,
                                 seed=cfg.basis_seed + 1)
            hr_basis, hr_w = res.u, g_norm.w
            np.savez(os.path.join(outdir, "residual_basis.npz"),
                     u_g=hr_basis, w_g=hr_w)

        stage = "point-selection"
        forced = list(problem.mesh.boundary_cells)
        ecsw_weights = None
        if cfg.scheme == "ecsw":
            ecsw_weights, points, _, _ = hri.compute_ecsw_weights(
                hr_basis, cfg.ecsw_tolerance, problem.n_fields, problem.n_cells,
                forced_boundary=forced)
            np.savez(os.path.join(outdir, "ecsw.npz"), weights=ecsw_weights)
        elif cfg.scheme == "sopt":
            points = hri.select_sopt_greedy(hr_basis, cfg.r_h, forced,
                                            problem.n_fields, problem.n_cells)
        else:  # deim greedy, also the initial set for adaptive variants
            points = hri.select_deim_greedy(hr_basis, cfg.r_h, forced,
                                            problem.n_fields, problem.n_cells)
        np.savez(os.path.join(outdir, "plan.npz"), cells=points.cells,
                 forced=points.forced, scores=points.score_history)
        reporting.write_magic_points(
            os.path.join(outdir, "magic_points.csv"),
            [[0, int(c), float(s)] for c, s in zip(points.cells,
                                                   points.score_history)])
        return 0
    except HromError as exc:
        raise HromError(f"build stage '{stage}' failed: {exc}") from exc


def _decay_ranks(r_max):
    ranks = sorted({max(1, r_max // 4), max(1, r_max // 2),
                    max(1, (3 * r_max) // 4), r_max})
    return ranks


def _build_operator_from_artifacts(cfg, problem, basis, outdir):
    if cfg.variant.lower() == "dense":
        return None
    with np.load(os.path.join(outdir, "plan.npz")) as z:
        points = hri.MagicPointSet(cells=z["cells"], forced=z["forced"],
                                   score_history=z["scores"])
    hr_basis = hr_w = None
    ecsw_weights = None
    if cfg.mode in ("FB", "RB"):
        if cfg.mode == "FB":
            hr_basis, hr_w = basis.u, basis.normalization.w
        else:
            with np.load(os.path.join(outdir, "residual_basis.npz")) as z:
                hr_basis, hr_w = z["u_g"], z["w_g"]
        if cfg.scheme == "ecsw":
            with np.load(os.path.join(outdir, "ecsw.npz")) as z:
                ecsw_weights = z["weights"]
    return hri.build_operator(problem, basis, points, cfg.mode, cfg.scheme,
                              hr_basis=hr_basis, hr_w=hr_w,
                              ecsw_dof_weights=ecsw_weights,
                              update_period=cfg.update_period)


def cmd_rom(cfg, outdir):
    """Online stage: run every test parameter, write metrics and timings."""
    problem, test_states, test_mus, test_ts = _load_sweep(cfg, outdir, "test")
    basis = _load_basis(_basis_path(outdir))
    model = ae.load_model(os.path.join(outdir, "model.bin"))
    operator = _build_operator_from_artifacts(cfg, problem, basis, outdir)
    settings = romm.SolverSettings(max_iterations=cfg.max_iterations,
                                   abs_tol=cfg.abs_tol, rel_tol=cfg.rel_tol,
                                   on_failure=cfg.on_failure)
    rp = romm.RomProblem(problem=problem, basis=basis, model=model,
                         operator=operator, dt_rom=cfg.dt_rom, r_h=cfg.r_h,
                         settings=settings)
    method = cfg.variant
    err_rows, aerec_rows, timing_rows = [], [], []
    failures = []
    os.makedirs(os.path.join(outdir, "trajectories"), exist_ok=True)
    for mu in cfg.test_params:
        sel = test_mus == mu
        ref_states = test_states[sel]
        ref_times = test_ts[sel]
        # AE-REC baseline: encode-decode round trip of the stored reference
        for j in range(ref_states.shape[0]):
            raw = ref_states[j]
            rec = ae.decode(model, basis, ae.encode(model, basis, raw))
            _append_field_errors(aerec_rows, problem, mu, ref_times[j], rec, raw)
        t_start = time.perf_counter()
        try:
            traj = romm.solve_trajectory(rp, mu, ref_states[0])
        except HromError as exc:
            failures.append({"mu": mu, "error": str(exc)})
            continue
        total_s = time.perf_counter() - t_start
        recon = romm.reconstruct(rp, traj)
        reporting.write_trajectory(
            os.path.join(outdir, "trajectories", f"traj_{method}_{mu!r}.csv"),
            mu, traj)
        snapshots.write_snapshot_file(
            os.path.join(outdir, "trajectories", f"states_{method}_{mu!r}.bin"),
            recon, np.full(recon.shape[0], mu), traj.times,
            problem.n_fields, problem.n_cells)
        lookup = {round(t / rp.dt_rom): j for j, t in enumerate(traj.times)}
        for j, t in enumerate(ref_times):
            key = round(t / rp.dt_rom)
            if key in lookup and abs(lookup[key] * rp.dt_rom - t) < 1e-9:
                _append_field_errors(err_rows, problem, mu, t,
                                     recon[lookup[key]], ref_states[j])
        walls = [d.wall_ms for d in traj.diagnostics[1:]]
        upd = [e["wall_ms"] for e in traj.update_events]
        timing_rows.append([method, mu, float(np.mean(walls)),
                            float(np.percentile(walls, 95)),
                            float(np.mean(upd)) if upd else 0.0, total_s])
        if traj.update_events:
            reporting.write_magic_points(
                os.path.join(outdir, f"magic_updates_{mu!r}.csv"),
                [[e["step"], int(c), float(s)]
                 for e in traj.update_events if e["changed"]
                 for c, s in zip(e["cells"], e["scores"])])
    reporting.write_error_metrics(os.path.join(outdir, f"errors_{method}.csv"),
                                  err_rows)
    reporting.write_error_metrics(os.path.join(outdir, "errors_AE-REC.csv"),
                                  aerec_rows)
    reporting.write_timings(os.path.join(outdir, "timings.csv"), timing_rows)
    if failures:
        with open(os.path.join(outdir, "rom_failures.json"), "w") as fh:
            json.dump(failures, fh, indent=1)
        return 3
    return 0


def _append_field_errors(rows, problem, mu, t, candidate, reference):
    m = problem.n_cells
    for f, name in enumerate(problem.field_names):
        sl = slice(f * m, (f + 1) * m)
        nrm = float(np.linalg.norm(reference[sl]))
        err = float(np.linalg.norm(candidate[sl] - reference[sl]))
        rows.append([mu, t, name, err / nrm if nrm > 0 else 0.0])


def cmd_select_points(cfg, outdir):
    """Run the configured selection on the stored basis, export the CSV."""
    problem = cfg.make_problem()
    basis = _load_basis(_basis_path(outdir))
    forced = list(problem.mesh.boundary_cells)
    if cfg.scheme == "ecsw":
        _, points, converged, resid = hri.compute_ecsw_weights(
            basis.u, cfg.ecsw_tolerance, problem.n_fields, problem.n_cells,
            forced_boundary=forced)
    elif cfg.scheme == "sopt":
        points = hri.select_sopt_greedy(basis.u, cfg.r_h, forced,
                                        problem.n_fields, problem.n_cells)
    else:
        points = hri.select_deim_greedy(basis.u, cfg.r_h, forced,
                                        problem.n_fields, problem.n_cells)
    path = os.path.join(outdir, f"points_{cfg.scheme}.csv")
    reporting.write_magic_points(
        path, [[0, int(c), float(s)]
               for c, s in zip(points.cells, points.score_history)])
    return 0


def cmd_report(out_path, inputs):
    n = reporting.merge_reports(inputs, out_path)
    print(f"merged {len(inputs)} reports, {n} rows -> {out_path}")
    return 0


def _error_record(outdir, code, exc):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    try:
        if outdir:
            with open(os.path.join(outdir, "error.json"), "w") as fh:
                json.dump(record, fh, indent=1)
    except OSError:
        pass
    print(json.dumps(record), file=sys.stderr)


def build_parser():
    parser = argparse.ArgumentParser(prog="hrom",
                                     description="hyper-reduced ROM harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fom", "build", "rom", "select-points"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="override config output_dir")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("report")
    p.add_argument("--out", required=True, help="merged CSV path")
    p.add_argument("inputs", nargs="+")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    outdir = None
    try:
        if args.command == "report":
            return cmd_report(args.out, args.inputs)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = load_config(args.config, overrides or None)
        outdir = _ensure_outdir(cfg, args.out)
        if args.command == "fom":
            return cmd_fom(cfg, args.config, outdir, threads=args.threads,
                           overrides=overrides or None)
        if args.command == "build":
            return cmd_build(cfg, outdir)
        if args.command == "rom":
            return cmd_rom(cfg, outdir)
        if args.command == "select-points":
            return cmd_select_points(cfg, outdir)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        _error_record(outdir, 2, exc)
        return 2
    except HromError as exc:
        _error_record(outdir, 3, exc)
        return 3
    except OSError as exc:
        _error_record(outdir, 4, exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
