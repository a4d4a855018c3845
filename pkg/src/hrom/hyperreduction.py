"""Magic-point selection and hyper-reduced residual operators.

Three selection families (gappy-reconstruction greedy, orthogonality-score
greedy, sparse nonnegative quadrature) feed three operator modes:

* ``C``  - collocation: the restricted residual itself is the objective;
* ``FB`` - gappy reconstruction against the state basis, rows divided by W;
* ``RB`` - gappy reconstruction against a residual-snapshot basis and its
  own normalization;

plus the adaptive collocation variant that re-selects points during time
stepping from decoder-sensitivity differences.
"""

import re
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ConstructionError, PreconditionError
from .fom import SubmeshIndexing, residual_args, submesh_indexing
from .linalg import default_rcond, nnls, pseudo_inverse


@dataclass(frozen=True)
class MagicPointSet:
    cells: np.ndarray              # selection order, forced cells first
    forced: np.ndarray
    score_history: np.ndarray      # score at the moment each cell was picked

    @property
    def n_cells(self):
        return self.cells.shape[0]


@dataclass(frozen=True)
class HyperReducedOperator:
    mode: str                      # "C" | "FB" | "RB"
    scheme: str                    # "deim" | "sopt" | "ecsw" | "adaptive"
    indexing: SubmeshIndexing
    forced: np.ndarray
    wu_sub: np.ndarray             # chart rows on the submesh dofs, (s*c, p)
    gappy: np.ndarray = None       # (r_hr, k*c) for FB/RB with deim/sopt
    w_restr: np.ndarray = None     # (k*c,) restricted W or W_G
    ecsw_weights: np.ndarray = None  # (k*c,) for weighted ecsw modes
    update_period: int = None      # C-UPn

    @property
    def objective_size(self):
        if self.gappy is not None:
            return self.gappy.shape[0]
        return self.indexing.magic_dofs.shape[0]

    def mode_arrays(self):
        """(mode_code, w_restr, gappy, ecsw) in kernel form, dummies when unused."""
        kc = self.indexing.magic_dofs.shape[0]
        if self.mode == "C":
            return (kernels.MODE_COLLOCATE, np.ones(kc), np.zeros((0, 0)), np.zeros(0))
        if self.scheme == "ecsw":
            return (kernels.MODE_ECSW, self.w_restr, np.zeros((0, 0)), self.ecsw_weights)
        return (kernels.MODE_GAPPY, self.w_restr, self.gappy, np.zeros(0))


_VARIANT_RE = re.compile(r"^(C|FB|RB)-(DEIM|SOPT|ECSW)$|^C-UP(\d+)$", re.IGNORECASE)


def parse_variant(name):
    """'C-DEIM', 'FB-ECSW', 'C-UP50', ... -> (mode, scheme, update_period)."""
    m = _VARIANT_RE.match(name.strip())
    if not m:
        raise PreconditionError(f"unknown hyper-reduction variant {name!r}")
    if m.group(3) is not None:
        return "C", "adaptive", int(m.group(3))
    return m.group(1).upper(), m.group(2).lower(), None


def _cell_scores(matrix, n_fields, n_cells):
    """Sum of squared entries per cell, over fields and columns."""
    sq = (matrix * matrix).reshape(n_fields, n_cells, -1)
    return sq.sum(axis=(0, 2))


def _dof_rows(cells, n_fields, n_cells):
    cells = np.asarray(cells, dtype=np.int64)
    return np.concatenate([f * n_cells + cells for f in range(n_fields)])


def select_deim_greedy(u_hr, r_h, forced_boundary, n_fields, n_cells, rcond=None):
    """Greedy sampling by largest gappy reconstruction residual of the basis.

    Forced boundary cells enter first and do not count against ``r_h``.
    When the reconstruction residual collapses (sampled basis already full
    rank) the remaining picks fall back to raw basis magnitude.
    """
    u = np.asarray(u_hr, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != n_fields * n_cells:
        raise PreconditionError("u_hr rows must equal n_fields * n_cells")
    if not 1 <= r_h <= n_cells:
        raise PreconditionError(f"r_h must lie in [1, {n_cells}]")
    if rcond is None:
        rcond = default_rcond(u.shape)
    forced = np.unique(np.asarray(sorted(forced_boundary), dtype=np.int64))
    selected = list(forced)
    magnitude = _cell_scores(u, n_fields, n_cells)
    scores_hist = [np.nan] * len(selected)
    fallback_warned = False
    scale = float(magnitude.max(initial=0.0))
    for _ in range(r_h):
        if selected:
            dofs = _dof_rows(np.array(sorted(selected)), n_fields, n_cells)
            pu = u[dofs]
            resid = u - u @ (pseudo_inverse(pu, rcond) @ pu)
        else:
            resid = u
        scores = _cell_scores(resid, n_fields, n_cells)
        scores[np.asarray(selected, dtype=np.int64)] = -np.inf
        best = int(np.argmax(scores))
        if not np.isfinite(scores[best]) or scores[best] <= 1e-28 * max(scale, 1.0):
            if not fallback_warned:
                warnings.warn("gappy residual collapsed; falling back to "
                              "basis-magnitude selection")
                fallback_warned = True
            mag = magnitude.copy()
            mag[np.asarray(selected, dtype=np.int64)] = -np.inf
            best = int(np.argmax(mag))
            scores_hist.append(float(mag[best]))
        else:
            scores_hist.append(float(scores[best]))
        selected.append(best)
    cells = np.asarray(selected, dtype=np.int64)
    return MagicPointSet(cells=cells, forced=forced,
                         score_history=np.asarray(scores_hist))


def sopt_score(p_u):
    """Orthogonality score of sampled basis rows, in [0, 1].

    1 exactly when the columns are mutually orthonormal; 0 when rank
    deficient. Requires every column to have nonzero norm.
    """
    p_u = np.asarray(p_u, dtype=np.float64)
    if p_u.ndim != 2 or p_u.size == 0:
        raise PreconditionError("sopt_score expects a nonempty 2d matrix")
    col_norms = np.linalg.norm(p_u, axis=0)
    if np.any(col_norms == 0.0):
        raise PreconditionError("sopt_score: zero-norm column")
    r = p_u.shape[1]
    if p_u.shape[0] < r:
        return 0.0
    sigma = np.linalg.svd(p_u, compute_uv=False)
    if sigma[-1] == 0.0:
        return 0.0
    log_score = (np.log(sigma).sum() - np.log(col_norms).sum()) / r
    return float(np.exp(log_score))


def _sopt_candidate_score(u, rows, r_hr):
    """Greedy scoring with the leading min(#rows, r_hr) basis columns."""
    cols = min(rows.shape[0], r_hr)
    sub = u[rows][:, :cols]
    norms = np.linalg.norm(sub, axis=0)
    if np.any(norms == 0.0):
        return 0.0
    if sub.shape[0] < cols:
        return 0.0
    sigma = np.linalg.svd(sub, compute_uv=False)
    if sigma[-1] == 0.0:
        return 0.0
    return float(np.exp((np.log(sigma).sum() - np.log(norms).sum()) / cols))


def select_sopt_greedy(u_hr, r_h, forced_boundary, n_fields, n_cells):
    """Greedy cell selection maximizing the orthogonality score of the
    sampled rows; ties break to the lowest cell index."""
    u = np.asarray(u_hr, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != n_fields * n_cells:
        raise PreconditionError("u_hr rows must equal n_fields * n_cells")
    if not 1 <= r_h <= n_cells:
        raise PreconditionError(f"r_h must lie in [1, {n_cells}]")
    r_hr = u.shape[1]
    forced = np.unique(np.asarray(sorted(forced_boundary), dtype=np.int64))
    selected = list(forced)
    scores_hist = [np.nan] * len(selected)
    magnitude = _cell_scores(u, n_fields, n_cells)
    fallback_warned = False
    for _ in range(r_h):
        chosen = -1
        chosen_score = 0.0
        for cand in range(n_cells):
            if cand in selected:
                continue
            rows = _dof_rows(np.array(sorted(selected + [cand])), n_fields, n_cells)
            score = _sopt_candidate_score(u, rows, r_hr)
            if score > chosen_score + 1e-15 or (chosen < 0 and score > 0.0):
                chosen, chosen_score = cand, score
        if chosen < 0:
            # no candidate achieves a positive score: reuse the gappy residual rule
            if not fallback_warned:
                warnings.warn("all orthogonality scores are zero; falling back to "
                              "gappy residual selection")
                fallback_warned = True
            dofs = _dof_rows(np.array(sorted(selected)), n_fields, n_cells) \
                if selected else np.empty(0, dtype=np.int64)
            if dofs.size:
                pu = u[dofs]
                resid = u - u @ (pseudo_inverse(pu, default_rcond(u.shape)) @ pu)
            else:
                resid = u
            scores = _cell_scores(resid, n_fields, n_cells)
            scores[np.asarray(selected, dtype=np.int64)] = -np.inf
            if not np.isfinite(scores.max()) or scores.max() <= 0.0:
                scores = magnitude.copy()
                scores[np.asarray(selected, dtype=np.int64)] = -np.inf
            chosen = int(np.argmax(scores))
            chosen_score = float(scores[chosen])
        selected.append(int(chosen))
        scores_hist.append(float(chosen_score))
    return MagicPointSet(cells=np.asarray(selected, dtype=np.int64), forced=forced,
                         score_history=np.asarray(scores_hist))


def compute_ecsw_weights(u_hr, tolerance, n_fields, n_cells, forced_boundary=()):
    """Sparse nonnegative quadrature weights reproducing basis column sums.

    Solves ``min ||u_hr.T @ q - col_sums||`` over q >= 0; the support cells
    become the magic points. Returns (weights, point set, converged flag,
    residual norm).
    """
    u = np.asarray(u_hr, dtype=np.float64)
    if not 0.0 < tolerance < 1.0:
        raise PreconditionError("tolerance must lie in (0, 1)")
    if u.ndim != 2 or u.shape[0] != n_fields * n_cells:
        raise PreconditionError("u_hr rows must equal n_fields * n_cells")
    targets = u.sum(axis=0)
    result = nnls(u.T, targets)
    q = result.weights
    support_mask = q.reshape(n_fields, n_cells).sum(axis=0) > 0.0
    forced = np.unique(np.asarray(sorted(forced_boundary), dtype=np.int64))
    cells = np.unique(np.concatenate([np.flatnonzero(support_mask), forced]))
    if cells.size == 0:
        raise ConstructionError("ecsw produced an empty support")
    cell_weight = q.reshape(n_fields, n_cells).sum(axis=0)
    point_set = MagicPointSet(cells=cells.astype(np.int64), forced=forced,
                              score_history=cell_weight[cells])
    target_norm = float(np.linalg.norm(targets))
    converged = result.residual_norm < tolerance * max(target_norm, 1e-300)
    if not converged:
        warnings.warn(
            f"ecsw residual {result.residual_norm:.3e} above "
            f"{tolerance:.1e} * ||targets||; weights kept anyway")
    return q, point_set, converged, result.residual_norm


def build_operator(problem, chart_basis, magic, mode, scheme,
                   hr_basis=None, hr_w=None, ecsw_dof_weights=None,
                   update_period=None, rcond=None):
    """Assemble a bound hyper-reduced operator for one chart.

    ``hr_basis``/``hr_w`` supply the gappy basis and normalization (the
    chart's own for FB, a residual-snapshot basis for RB).
    """
    if mode not in ("C", "FB", "RB"):
        raise PreconditionError(f"unknown operator mode {mode!r}")
    cells = magic.cells if isinstance(magic, MagicPointSet) else np.asarray(magic)
    forced = magic.forced if isinstance(magic, MagicPointSet) else np.empty(0, np.int64)
    indexing = submesh_indexing(problem, cells)
    wu_sub = np.ascontiguousarray(chart_basis.wu[indexing.submesh_dofs])

    gappy = None
    w_restr = None
    ecsw_weights = None
    if mode in ("FB", "RB"):
        if hr_basis is None or hr_w is None:
            raise PreconditionError(f"{mode} operators need hr_basis and hr_w")
        w_restr = np.asarray(hr_w, dtype=np.float64)[indexing.magic_dofs]
        if scheme == "ecsw":
            if ecsw_dof_weights is None:
                raise PreconditionError("ecsw operators need the weight vector")
            ecsw_weights = np.asarray(ecsw_dof_weights)[indexing.magic_dofs]
        else:
            pu = np.asarray(hr_basis, dtype=np.float64)[indexing.magic_dofs]
            if rcond is None:
                rcond = default_rcond(pu.shape)
            sigma = np.linalg.svd(pu, compute_uv=False)
            if sigma.size == 0 or sigma[0] == 0.0 or \
                    sigma[-1] <= rcond * sigma[0] or pu.shape[0] < pu.shape[1]:
                raise ConstructionError(
                    "sampled basis is singular at the requested rcond; "
                    "increase r_h or reduce the basis rank")
            gappy = pseudo_inverse(pu, rcond)
    return HyperReducedOperator(mode=mode, scheme=scheme, indexing=indexing,
                                forced=np.asarray(forced, dtype=np.int64),
                                wu_sub=wu_sub, gappy=gappy, w_restr=w_restr,
                                ecsw_weights=ecsw_weights,
                                update_period=update_period)


def rebind_operator(op, problem, chart_basis, new_cells):
    """Re-point a collocation operator at a new magic-cell set (adaptive use)."""
    if op.mode != "C":
        raise PreconditionError("only collocation operators can be re-pointed")
    indexing = submesh_indexing(problem, new_cells)
    wu_sub = np.ascontiguousarray(chart_basis.wu[indexing.submesh_dofs])
    return replace(op, indexing=indexing, wu_sub=wu_sub)


def apply_operator(op, problem, mu, z, history_z, model, basis, dt):
    """Hyper-reduced objective at latent state z.

    Decodes only the submesh rows of the chart (never the full state),
    evaluates the residual on the magic cells and applies the operator's
    post-scaling.
    """
    z = np.asarray(z, dtype=np.float64)
    prev_sub = _decode_submesh(op, model, np.asarray(history_z[0], dtype=np.float64))
    cur_sub = _decode_submesh(op, model, z)
    from .fom import residual_on_submesh  # late import to avoid cycle at module load
    rc = residual_on_submesh(problem, mu, cur_sub, [prev_sub], dt, op.indexing)
    if op.mode == "C":
        return rc
    scaled = rc / op.w_restr
    if op.scheme == "ecsw":
        return op.ecsw_weights * scaled
    return op.gappy @ scaled


def _decode_submesh(op, model, z):
    y = model.decode_coords(z) if model is not None else z
    return kernels.decode_rows(op.wu_sub, y)


def adaptive_scores(model, basis, z_t, z_prev):
    """Per-cell sensitivity-difference scores used by the adaptive update."""
    from .autoencoder import decoder_jacobian
    if model is not None:
        dphi = decoder_jacobian(model, z_t) - decoder_jacobian(model, z_prev)
    else:
        dphi = np.zeros((basis.r_rsvd, np.asarray(z_t).shape[0]))
    o_mat = basis.wu @ dphi                      # d x r sensitivity differences
    c, m = basis.n_fields, basis.n_cells
    per_dir = (o_mat * o_mat).reshape(c, m, -1).sum(axis=0)   # m x r
    return per_dir.max(axis=1)


def adaptive_update(model, basis, z_t, z_prev, r_h, forced_boundary, problem):
    """Pick the cells where the decoder sensitivities moved the most.

    Returns a new MagicPointSet, or None when the sensitivity difference is
    identically zero (previous plan should be kept).
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    z_prev = np.asarray(z_prev, dtype=np.float64)
    forced = np.unique(np.asarray(sorted(forced_boundary), dtype=np.int64))
    if np.array_equal(z_t, z_prev):
        warnings.warn("adaptive update skipped: latent state did not move")
        return None
    scores = adaptive_scores(model, basis, z_t, z_prev)
    if float(scores.max(initial=0.0)) == 0.0:
        warnings.warn("adaptive update skipped: zero sensitivity difference")
        return None
    order = np.argsort(-scores, kind="stable")
    forced_set = set(forced.tolist())
    picked = [int(i) for i in order[:r_h]]
    extra = np.asarray([i for i in picked if i not in forced_set], dtype=np.int64)
    cells = np.concatenate([forced, extra])
    return MagicPointSet(cells=cells.astype(np.int64), forced=forced,
                         score_history=np.concatenate(
                             [np.full(forced.size, np.nan), scores[extra]]))
