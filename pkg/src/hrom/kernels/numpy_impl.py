"""Pure-numpy fallback kernels, API-compatible with ``numba_impl``.

Vectorized evaluation keeps the per-element expressions identical to the
compiled version, so full-vs-submesh restriction stays bit-exact within
this backend too.
"""

import numpy as np

backend_name = "numpy"


def _godunov_vec(ul, ur):
    fl = 0.5 * ul * ul
    fr = 0.5 * ur * ur
    rarefaction = np.where(ul > 0.0, fl, np.where(ur < 0.0, fr, 0.0))
    return np.where(ul <= ur, rarefaction, np.maximum(fl, fr))


def _burgers_rows(gcells, u_i, u_l, u_r, up_i, dt, dx_i, nu, uin, bc_code):
    fl = _godunov_vec(u_l, u_i)
    fr = _godunov_vec(u_i, u_r)
    out = (u_i - up_i) / dt + (fr - fl) / dx_i - nu * (u_r - 2.0 * u_i + u_l) / (dx_i * dx_i)
    if bc_code == 0:
        out = np.where(gcells == 0, (u_i - uin) / dt, out)
    return out


def burgers_residual_full(u, uprev, dt, dx, nu, uin, bc_code):
    m = u.shape[0]
    idx = np.arange(m)
    if bc_code == 1:
        u_l = u[idx - 1]
        u_r = u[(idx + 1) % m]
    else:
        u_l = u[np.maximum(idx - 1, 0)]
        u_r = u[np.minimum(idx + 1, m - 1)]
    return _burgers_rows(idx, u, u_l, u_r, uprev, dt, dx, nu, uin, bc_code)


def burgers_residual_cells(u_sub, uprev_sub, dt, dx_cells, nu, uin, bc_code,
                           gcells, pos, lft, rgt, m):
    u_i = u_sub[pos]
    u_l = np.where(lft >= 0, u_sub[lft], u_i)
    u_r = np.where(rgt >= 0, u_sub[rgt], u_i)
    return _burgers_rows(gcells, u_i, u_l, u_r, uprev_sub[pos], dt, dx_cells,
                         nu, uin, bc_code)


def _euler_pressure(rho, mom, ene, gamma):
    return (gamma - 1.0) * (ene - 0.5 * mom * mom / rho)


def _rusanov_vec(rl, ml, el, rr, mr, er, gamma):
    with np.errstate(divide="ignore", invalid="ignore"):
        pl = _euler_pressure(rl, ml, el, gamma)
        pr = _euler_pressure(rr, mr, er, gamma)
    ok = (rl > 0.0) & (rr > 0.0) & (pl > 0.0) & (pr > 0.0)
    status = 0 if bool(np.all(ok)) else 1
    if status:
        shape = np.shape(rl)
        z = np.full(shape, np.nan)
        return z, z, z, status
    ul = ml / rl
    ur = mr / rr
    s = np.maximum(np.abs(ul) + np.sqrt(gamma * pl / rl),
                   np.abs(ur) + np.sqrt(gamma * pr / rr))
    f0 = 0.5 * (ml + mr) - 0.5 * s * (rr - rl)
    f1 = 0.5 * ((ml * ul + pl) + (mr * ur + pr)) - 0.5 * s * (mr - ml)
    f2 = 0.5 * ((el + pl) * ul + (er + pr) * ur) - 0.5 * s * (er - el)
    return f0, f1, f2, status


def _euler_rows(gcells, qc, qln, qrn, qp, dt, dx_i, gamma, qL):
    fl0, fl1, fl2, st1 = _rusanov_vec(qln[0], qln[1], qln[2], qc[0], qc[1], qc[2], gamma)
    fr0, fr1, fr2, st2 = _rusanov_vec(qc[0], qc[1], qc[2], qrn[0], qrn[1], qrn[2], gamma)
    status = st1 or st2
    k = gcells.shape[0]
    out = np.empty(3 * k)
    if status:
        out.fill(np.nan)
        return out, status
    r0 = (qc[0] - qp[0]) / dt + (fr0 - fl0) / dx_i
    r1 = (qc[1] - qp[1]) / dt + (fr1 - fl1) / dx_i
    r2 = (qc[2] - qp[2]) / dt + (fr2 - fl2) / dx_i
    left = gcells == 0
    out[:k] = np.where(left, (qc[0] - qL[0]) / dt, r0)
    out[k:2 * k] = np.where(left, (qc[1] - qL[1]) / dt, r1)
    out[2 * k:] = np.where(left, (qc[2] - qL[2]) / dt, r2)
    return out, status


def euler_residual_full(q, qprev, dt, dx, gamma, qL):
    m = q.shape[0] // 3
    idx = np.arange(m)
    il = np.maximum(idx - 1, 0)
    ir = np.minimum(idx + 1, m - 1)
    qf = q.reshape(3, m)
    qpf = qprev.reshape(3, m)
    return _euler_rows(idx, qf, qf[:, il], qf[:, ir], qpf, dt, dx, gamma, qL)


def euler_residual_cells(q_sub, qprev_sub, dt, dx_cells, gamma, qL,
                         gcells, pos, lft, rgt, m, s):
    qf = q_sub.reshape(3, s)
    qpf = qprev_sub.reshape(3, s)
    pl = np.where(lft >= 0, lft, pos)
    pr = np.where(rgt >= 0, rgt, pos)
    return _euler_rows(gcells, qf[:, pos], qf[:, pl], qf[:, pr], qpf[:, pos],
                       dt, dx_cells, gamma, qL)


def decode_rows(wu, y):
    # per-row reduction over the fixed mode axis: identical bits for any row subset
    return (wu * y).sum(axis=1)


def _unpack(flat, dims):
    layers = []
    off = 0
    for l in range(dims.shape[0] - 1):
        din, dout = int(dims[l]), int(dims[l + 1])
        w = flat[off:off + dout * din].reshape(dout, din)
        b = flat[off + dout * din: off + dout * din + dout]
        layers.append((w, b))
        off += dout * din + dout
    return layers


def _elu(x):
    return np.where(x > 0.0, x, np.exp(np.minimum(x, 0.0)) - 1.0)


def mlp_forward(flat, dims, acts, x):
    cur = np.asarray(x, dtype=np.float64)
    for l, (w, b) in enumerate(_unpack(flat, dims)):
        cur = w @ cur + b
        if acts[l] == 1:
            cur = _elu(cur)
    return cur


def mlp_jacobian(flat, dims, acts, x):
    cur = np.asarray(x, dtype=np.float64)
    jac = np.eye(dims[0])
    for l, (w, b) in enumerate(_unpack(flat, dims)):
        pre = w @ cur + b
        jac = w @ jac
        if acts[l] == 1:
            slope = np.where(pre > 0.0, 1.0, np.exp(np.minimum(pre, 0.0)))
            jac = slope[:, None] * jac
            cur = _elu(pre)
        else:
            cur = pre
    return cur, jac


def dense_objective(z, use_mlp, dflat, ddims, dacts, wu, prev_full,
                    pcode, dt, dx, b0, b1, bc_code, qL):
    y = mlp_forward(dflat, ddims, dacts, z) if use_mlp == 1 else z
    x = decode_rows(wu, y)
    if pcode == 0:
        return burgers_residual_full(x, prev_full, dt, dx, b0, b1, bc_code), 0
    return euler_residual_full(x, prev_full, dt, dx, b0, qL)


def _normal_eqs(objective, z, f0, h):
    r = z.shape[0]
    jay = np.empty((f0.shape[0], r))
    for j in range(r):
        hj = h * max(1.0, abs(z[j]))
        zp = z.copy()
        zp[j] += hj
        fj, st = objective(zp)
        if st != 0:
            return np.zeros((r, r)), np.zeros(r), st
        jay[:, j] = (fj - f0) / hj
    return jay.T @ jay, jay.T @ f0, 0


def dense_normal_eqs(z, f0, h, use_mlp, dflat, ddims, dacts, wu, prev_full,
                     pcode, dt, dx, b0, b1, bc_code, qL):
    def objective(zz):
        return dense_objective(zz, use_mlp, dflat, ddims, dacts, wu, prev_full,
                               pcode, dt, dx, b0, b1, bc_code, qL)
    return _normal_eqs(objective, z, f0, h)


def submesh_objective(z, use_mlp, dflat, ddims, dacts, wu_sub, prev_sub,
                      pcode, dt, dx_cells, b0, b1, bc_code, qL,
                      gcells, pos, lft, rgt, m, s,
                      mode, w_restr, gappy, ecsw_w):
    y = mlp_forward(dflat, ddims, dacts, z) if use_mlp == 1 else z
    x = decode_rows(wu_sub, y)
    if pcode == 0:
        rc = burgers_residual_cells(x, prev_sub, dt, dx_cells, b0, b1, bc_code,
                                    gcells, pos, lft, rgt, m)
        status = 0
    else:
        rc, status = euler_residual_cells(x, prev_sub, dt, dx_cells, b0, qL,
                                          gcells, pos, lft, rgt, m, s)
    if status != 0 or mode == 0:
        return rc, status
    scaled = rc / w_restr
    if mode == 2:
        return ecsw_w * scaled, 0
    return gappy @ scaled, 0


def damped_solve(jtj, diag, lam, jtf):
    """Solve (jtj + lam*diag(diag)) dz = -jtf; ok=0 on a singular system."""
    try:
        dz = np.linalg.solve(jtj + lam * np.diag(diag), -jtf)
    except np.linalg.LinAlgError:
        return np.zeros_like(jtf), 0
    return dz, 1


def submesh_normal_eqs(z, f0, h, use_mlp, dflat, ddims, dacts, wu_sub, prev_sub,
                       pcode, dt, dx_cells, b0, b1, bc_code, qL,
                       gcells, pos, lft, rgt, m, s,
                       mode, w_restr, gappy, ecsw_w):
    def objective(zz):
        return submesh_objective(zz, use_mlp, dflat, ddims, dacts, wu_sub, prev_sub,
                                 pcode, dt, dx_cells, b0, b1, bc_code, qL,
                                 gcells, pos, lft, rgt, m, s,
                                 mode, w_restr, gappy, ecsw_w)
    return _normal_eqs(objective, z, f0, h)
