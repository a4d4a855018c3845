"""Independent oracles shared across test modules.

Everything here re-derives expected values from first principles (candidate
enumeration, brute-force replay, direct formula evaluation) without calling
the implementation paths it checks.
"""

import itertools

import numpy as np


def godunov_flux_oracle(ul, ur):
    """Exact Riemann flux of f(u) = u^2/2 by candidate evaluation.

    The extremum of a convex flux over [ul, ur] sits at an endpoint or at
    the stationary point u = 0.
    """
    f = lambda u: 0.5 * u * u
    cands = [ul, ur]
    if min(ul, ur) <= 0.0 <= max(ul, ur):
        cands.append(0.0)
    if ul <= ur:
        return min(f(u) for u in cands)
    return max(f(ul), f(ur))


def rusanov_flux_oracle(ql, qr, gamma):
    """Direct evaluation of the Rusanov flux formula for 1D Euler."""
    def split(q):
        rho, mom, ene = q
        u = mom / rho
        p = (gamma - 1.0) * (ene - 0.5 * mom * u)
        c = np.sqrt(gamma * p / rho)
        flux = np.array([mom, mom * u + p, (ene + p) * u])
        return flux, abs(u) + c
    fl, sl = split(ql)
    fr, sr = split(qr)
    s = max(sl, sr)
    return 0.5 * (fl + fr) - 0.5 * s * (np.asarray(qr) - np.asarray(ql))


def nnls_enumeration_oracle(a, b):
    """Exhaustive active-set solve of min ||a x - b|| with x >= 0.

    Tries every support set, solves the unconstrained least squares on it,
    keeps feasible candidates and returns the best (x, residual_norm).
    """
    m, n = a.shape
    best_x = np.zeros(n)
    best_r = float(np.linalg.norm(b))
    for k in range(1, n + 1):
        for support in itertools.combinations(range(n), k):
            cols = list(support)
            sol, *_ = np.linalg.lstsq(a[:, cols], b, rcond=None)
            if np.all(sol >= -1e-13):
                x = np.zeros(n)
                x[cols] = np.maximum(sol, 0.0)
                r = float(np.linalg.norm(a @ x - b))
                if r < best_r - 1e-14:
                    best_x, best_r = x, r
    return best_x, best_r


def deim_greedy_oracle(u_hr, r_h, forced, n_fields, n_cells):
    """Brute-force replay of the gappy-residual greedy selection."""
    u = np.asarray(u_hr, dtype=np.float64)
    selected = sorted(int(c) for c in forced)
    order = list(selected)
    for _ in range(r_h):
        if selected:
            cells = np.asarray(sorted(selected))
            rows = np.concatenate([f * n_cells + cells for f in range(n_fields)])
            pu = u[rows]
            # least-squares reconstruction of the basis from its sampled rows
            coeffs, *_ = np.linalg.lstsq(pu, u[rows], rcond=None)
            resid = u - u @ coeffs
            scores = (resid * resid).reshape(n_fields, n_cells, -1).sum(axis=(0, 2))
            scores[cells] = -np.inf
        else:
            scores = (u * u).reshape(n_fields, n_cells, -1).sum(axis=(0, 2))
        best = int(np.argmax(scores))
        order.append(best)
        selected.append(best)
    return order


def sopt_score_oracle(p_u):
    """Direct determinant/column-norm formula for the orthogonality score."""
    p_u = np.asarray(p_u, dtype=np.float64)
    r = p_u.shape[1]
    gram = p_u.T @ p_u
    det = np.linalg.det(gram)
    if det <= 0.0:
        return 0.0
    norms = np.linalg.norm(p_u, axis=0)
    return float((np.sqrt(det) / np.prod(norms)) ** (1.0 / r))


def sopt_greedy_oracle(u_hr, r_h, forced, n_fields, n_cells):
    """Per-step argmax replay of the orthogonality-score greedy."""
    u = np.asarray(u_hr, dtype=np.float64)
    r_hr = u.shape[1]
    selected = sorted(int(c) for c in forced)
    order = list(selected)
    for _ in range(r_h):
        best_cell, best_score = -1, 0.0
        for cand in range(n_cells):
            if cand in selected:
                continue
            cells = np.asarray(sorted(selected + [cand]))
            rows = np.concatenate([f * n_cells + cells for f in range(n_fields)])
            cols = min(rows.shape[0], r_hr)
            sub = u[rows][:, :cols]
            norms = np.linalg.norm(sub, axis=0)
            if np.any(norms == 0.0) or sub.shape[0] < cols:
                score = 0.0
            else:
                score = sopt_score_oracle(sub)
            if score > best_score + 1e-15 or (best_cell < 0 and score > 0.0):
                best_cell, best_score = cand, score
        if best_cell < 0:
            break
        selected.append(best_cell)
        order.append(best_cell)
    return order


def shock_position_oracle(state):
    """Cell index of the steepest gradient (single-shock profiles)."""
    return int(np.argmax(np.abs(np.diff(state))))


def mean_rel_l2(candidates, references):
    return float(np.mean(np.linalg.norm(candidates - references, axis=1)
                         / np.linalg.norm(references, axis=1)))
