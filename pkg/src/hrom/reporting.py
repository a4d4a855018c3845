"""CSV emission and merging for experiment outputs.

Floats are written with shortest round-trip formatting so identical runs
produce identical bytes.
"""

import csv
import os

import numpy as np

from .errors import DataError, PreconditionError

ERROR_HEADER = ["param", "time", "field", "rel_l2_err"]
MERGED_HEADER = ["method", "param", "time", "field", "rel_l2_err"]
MAGIC_HEADER = ["step", "cell_index", "score"]
TIMING_HEADER = ["method", "param", "mean_step_ms", "p95_step_ms",
                 "mean_update_ms", "total_s"]
DECAY_HEADER = ["r", "role", "field", "mean_rel_l2", "max_rel_l2"]


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_error_metrics(path, records):
    """records: iterable of (param, time, field, rel_l2_err)."""
    write_rows(path, ERROR_HEADER, records)


def write_magic_points(path, records):
    """records: iterable of (step, cell_index, score)."""
    write_rows(path, MAGIC_HEADER, records)


def write_timings(path, records):
    write_rows(path, TIMING_HEADER, records)


def write_decay(path, records):
    write_rows(path, DECAY_HEADER, records)


def trajectory_header(r):
    return (["param", "time"] + [f"latent_{i}" for i in range(r)]
            + ["objective_norm", "iterations", "wall_ms"])


def write_trajectory(path, mu, trajectory):
    r = trajectory.z.shape[1]
    rows = []
    for k in range(trajectory.z.shape[0]):
        if k == 0:
            obj, its, wall = 0.0, 0, 0.0
        else:
            d = trajectory.diagnostics[k - 1]
            obj, its, wall = d.objective_norm, d.iterations, d.wall_ms
        rows.append([mu, trajectory.times[k], *trajectory.z[k], obj, its, wall])
    write_rows(path, trajectory_header(r), rows)


def read_error_metrics(path, method=None):
    """Read a metrics CSV; returns list of dict rows (with method attached)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header == ERROR_HEADER:
            has_method = False
        elif header == MERGED_HEADER:
            has_method = True
        else:
            raise DataError(f"{path}: unexpected header {header}")
        rows = []
        for rec in reader:
            if has_method:
                m, param, t, fieldname, err = rec
            else:
                if method is None:
                    raise PreconditionError(f"{path}: method name required")
                m, (param, t, fieldname, err) = method, rec
            rows.append({"method": m, "param": float(param), "time": float(t),
                         "field": fieldname, "rel_l2_err": float(err)})
    return rows


def merge_reports(paths, out_path, methods=None):
    """Merge metric CSVs into one long-format table, deterministically ordered.

    ``methods`` optionally names the method per input file (defaults to the
    file stem). Duplicate (method, param, time, field) keys are an error.
    """
    if not paths:
        raise PreconditionError("need at least one report to merge")
    all_rows = []
    for i, path in enumerate(paths):
        method = methods[i] if methods else None
        if method is None:
            method = os.path.splitext(os.path.basename(path))[0]
        all_rows.extend(read_error_metrics(path, method=method))
    seen = set()
    for row in all_rows:
        key = (row["method"], row["param"], row["time"], row["field"])
        if key in seen:
            raise DataError(f"duplicate key in merged report: {key}")
        seen.add(key)
    all_rows.sort(key=lambda r: (r["method"], r["param"], r["time"], r["field"]))
    write_rows(out_path, MERGED_HEADER,
               [[r["method"], r["param"], r["time"], r["field"], r["rel_l2_err"]]
                for r in all_rows])
    return len(all_rows)


def aggregate_errors(rows):
    """Mean/max per (method, param) and overall, recomputable from rows."""
    from collections import defaultdict
    per = defaultdict(list)
    for r in rows:
        per[(r["method"], r["param"])].append(r["rel_l2_err"])
    out = []
    for (method, param), vals in sorted(per.items()):
        out.append({"method": method, "param": param,
                    "mean_rel_l2": float(np.mean(vals)),
                    "max_rel_l2": float(np.max(vals))})
    return out
