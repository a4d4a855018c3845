"""Snapshot normalization, reduced bases, reconstruction metrics and IO.

States carrying several physical fields are normalized monolithically: one
weight vector ``W = N / V`` built from the per-field maximum L2 norms ``N``
and the stacked cell measures ``V``, then a single basis is extracted from
the normalized snapshot matrix.
"""

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, PreconditionError
from .linalg import randomized_svd

SNAPSHOT_MAGIC = b"HROMSNAP"


@dataclass(frozen=True)
class NormalizationVector:
    w: np.ndarray   # N / V elementwise
    n: np.ndarray   # per-field max L2 norm, replicated over cells
    v: np.ndarray   # cell measures, stacked once per field


@dataclass(frozen=True)
class SnapshotSet:
    matrix: np.ndarray            # d x n, columns already divided by W
    mu: np.ndarray                # per-column parameter
    t: np.ndarray                 # per-column time
    normalization: NormalizationVector
    n_fields: int
    n_cells: int
    role: str = "train"

    @property
    def n_columns(self):
        return self.matrix.shape[1]


@dataclass(frozen=True)
class ReducedBasis:
    u: np.ndarray                 # d x r, orthonormal columns
    normalization: NormalizationVector
    n_fields: int
    n_cells: int

    @property
    def r_rsvd(self):
        return self.u.shape[1]

    @property
    def wu(self):
        """Rows of W-weighted modes; the only d-sized object the online stage reads."""
        if "_wu" not in self.__dict__:
            object.__setattr__(self, "_wu", np.ascontiguousarray(
                self.normalization.w[:, None] * self.u))
        return self.__dict__["_wu"]


def field_blocks(values, n_fields, n_cells):
    return [values[f * n_cells:(f + 1) * n_cells] for f in range(n_fields)]


def build_normalization(raw_states, mesh, n_fields):
    """Per-field max-L2 normalization over a collection of raw states."""
    states = np.atleast_2d(np.asarray(raw_states, dtype=np.float64))
    if states.size == 0:
        raise PreconditionError("need at least one snapshot")
    m = mesh.n_cells
    if states.shape[1] != n_fields * m:
        raise PreconditionError("snapshot length does not match n_fields * n_cells")
    n = np.empty(n_fields * m)
    for f in range(n_fields):
        block = states[:, f * m:(f + 1) * m]
        fmax = float(np.sqrt((block * block).sum(axis=1)).max())
        if fmax == 0.0:
            raise DataError(f"field {f} is identically zero across all snapshots")
        n[f * m:(f + 1) * m] = fmax
    v = np.tile(mesh.cell_measures, n_fields)
    return NormalizationVector(w=n / v, n=n, v=v)


def assemble_snapshots(raw_states, mu_values, t_values, normalization, mesh,
                       n_fields, role="train"):
    states = np.asarray(raw_states, dtype=np.float64)
    cols = states / normalization.w
    return SnapshotSet(matrix=np.ascontiguousarray(cols.T),
                       mu=np.asarray(mu_values, dtype=np.float64),
                       t=np.asarray(t_values, dtype=np.float64),
                       normalization=normalization, n_fields=n_fields,
                       n_cells=mesh.n_cells, role=role)


def reduced_basis_from_snapshots(snapshots, r_rsvd, oversampling=10, seed=0):
    res = randomized_svd(snapshots.matrix, r_rsvd, oversampling=oversampling,
                         seed=seed)
    return ReducedBasis(u=res.u, normalization=snapshots.normalization,
                        n_fields=snapshots.n_fields, n_cells=snapshots.n_cells), res


def filter_state(basis, state):
    """Reduced coordinates of a raw state: ``U.T @ (state / W)``."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (basis.u.shape[0],):
        raise PreconditionError("state length does not match basis rows")
    return basis.u.T @ (state / basis.normalization.w)


def unfilter_state(basis, coords):
    """Raw-state reconstruction: ``(W * U) @ coords``."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (basis.u.shape[1],):
        raise PreconditionError("coordinate length does not match basis columns")
    return basis.wu @ coords


def _relative_errors(basis, snapshot_set, reconstruct):
    """Per-column total and per-field relative L2 errors in raw state space."""
    w = basis.normalization.w
    m = snapshot_set.n_cells
    c = snapshot_set.n_fields
    totals, fields = [], []
    skipped = 0
    for j in range(snapshot_set.n_columns):
        raw = snapshot_set.matrix[:, j] * w
        nrm = np.linalg.norm(raw)
        if nrm == 0.0:
            skipped += 1
            continue
        rec = reconstruct(raw)
        diff = rec - raw
        totals.append(np.linalg.norm(diff) / nrm)
        per_field = []
        for f in range(c):
            sl = slice(f * m, (f + 1) * m)
            fn = np.linalg.norm(raw[sl])
            per_field.append(np.linalg.norm(diff[sl]) / fn if fn > 0 else 0.0)
        fields.append(per_field)
    if skipped:
        warnings.warn(f"skipped {skipped} zero-norm snapshots")
    return np.asarray(totals), np.asarray(fields), skipped


def reconstruction_errors(basis, snapshot_set):
    """Mean/max relative L2 reconstruction error of the linear basis."""
    if snapshot_set.n_columns == 0:
        raise PreconditionError("snapshot set is empty")

    def reconstruct(raw):
        if basis.r_rsvd == 0:
            return np.zeros_like(raw)
        return unfilter_state(basis, filter_state(basis, raw))

    totals, fields, skipped = _relative_errors(basis, snapshot_set, reconstruct)
    return {
        "mean_rel_l2": float(totals.mean()),
        "max_rel_l2": float(totals.max()),
        "mean_rel_l2_per_field": fields.mean(axis=0).tolist(),
        "max_rel_l2_per_field": fields.max(axis=0).tolist(),
        "skipped_zero_norm": skipped,
        "per_column": totals,
    }


def write_snapshot_file(path, raw_states, mu_values, t_values, n_fields, n_cells):
    """Binary snapshot format: magic, u64 d/n/c/M, f64 column-major data, (mu, t) records."""
    states = np.atleast_2d(np.asarray(raw_states, dtype=np.float64))
    n, d = states.shape
    if d != n_fields * n_cells:
        raise PreconditionError("snapshot length does not match n_fields * n_cells")
    mu_values = np.asarray(mu_values, dtype=np.float64)
    t_values = np.asarray(t_values, dtype=np.float64)
    if mu_values.shape != (n,) or t_values.shape != (n,):
        raise PreconditionError("metadata length must match snapshot count")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<QQQQ", d, n, n_fields, n_cells))
        # column-major: column j is snapshot j, i.e. states[j] contiguous
        fh.write(states.astype("<f8").tobytes(order="C"))
        meta = np.empty((n, 2))
        meta[:, 0] = mu_values
        meta[:, 1] = t_values
        fh.write(meta.astype("<f8").tobytes(order="C"))


def read_snapshot_file(path):
    """Returns (states (n, d), mu (n,), t (n,), n_fields, n_cells)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != SNAPSHOT_MAGIC:
            raise DataError(f"{path}: bad snapshot magic {magic!r}")
        d, n, c, m = struct.unpack("<QQQQ", fh.read(32))
        if d != c * m:
            raise DataError(f"{path}: header d={d} != c*M={c * m}")
        data = np.frombuffer(fh.read(8 * d * n), dtype="<f8").reshape(n, d)
        meta = np.frombuffer(fh.read(8 * 2 * n), dtype="<f8").reshape(n, 2)
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after snapshot payload")
    return data.copy(), meta[:, 0].copy(), meta[:, 1].copy(), int(c), int(m)
