"""Numba-compiled kernels. Same contracts as ``numpy_impl``.

Each submesh kernel evaluates exactly the per-cell expressions of its
full-mesh counterpart so that restricting the full residual and evaluating
on the submesh give bit-identical floats.
"""

import numpy as np
from numba import njit

backend_name = "numba"

_F = "float64"


@njit(cache=True)
def _godunov(ul, ur):
    # exact Riemann flux for f(u) = u^2/2
    if ul <= ur:
        if ul > 0.0:
            return 0.5 * ul * ul
        if ur < 0.0:
            return 0.5 * ur * ur
        return 0.0
    fl = 0.5 * ul * ul
    fr = 0.5 * ur * ur
    return fl if fl >= fr else fr


@njit(cache=True)
def _burgers_cell(i, u_i, u_l, u_r, up_i, dt, dxi, nu, uin, bc_code, m):
    # one interior/boundary residual row; u_l/u_r are neighbor values
    if bc_code == 0 and i == 0:
        return (u_i - uin) / dt
    fl = _godunov(u_l, u_i)
    fr = _godunov(u_i, u_r)
    return (u_i - up_i) / dt + (fr - fl) / dxi - nu * (u_r - 2.0 * u_i + u_l) / (dxi * dxi)


@njit(cache=True)
def burgers_residual_full(u, uprev, dt, dx, nu, uin, bc_code):
    m = u.shape[0]
    out = np.empty(m)
    for i in range(m):
        if bc_code == 1:
            u_l = u[i - 1] if i > 0 else u[m - 1]
            u_r = u[i + 1] if i < m - 1 else u[0]
        else:
            u_l = u[i - 1] if i > 0 else u[0]
            u_r = u[i + 1] if i < m - 1 else u[m - 1]
        out[i] = _burgers_cell(i, u[i], u_l, u_r, uprev[i], dt, dx[i], nu, uin, bc_code, m)
    return out


@njit(cache=True)
def burgers_residual_cells(u_sub, uprev_sub, dt, dx_cells, nu, uin, bc_code,
                           gcells, pos, lft, rgt, m):
    k = gcells.shape[0]
    out = np.empty(k)
    for j in range(k):
        i = gcells[j]
        u_i = u_sub[pos[j]]
        u_l = u_sub[lft[j]] if lft[j] >= 0 else u_i
        u_r = u_sub[rgt[j]] if rgt[j] >= 0 else u_i
        out[j] = _burgers_cell(i, u_i, u_l, u_r, uprev_sub[pos[j]], dt, dx_cells[j],
                               nu, uin, bc_code, m)
    return out


@njit(cache=True)
def _euler_pressure(rho, mom, ene, gamma):
    return (gamma - 1.0) * (ene - 0.5 * mom * mom / rho)


@njit(cache=True)
def _rusanov(rl, ml, el, rr, mr, er, gamma, fout):
    # Rusanov flux between left/right conservative states; returns status
    pl = _euler_pressure(rl, ml, el, gamma)
    pr = _euler_pressure(rr, mr, er, gamma)
    if rl <= 0.0 or rr <= 0.0 or pl <= 0.0 or pr <= 0.0:
        return 1
    ul = ml / rl
    ur = mr / rr
    cl = np.sqrt(gamma * pl / rl)
    cr = np.sqrt(gamma * pr / rr)
    sl = abs(ul) + cl
    sr = abs(ur) + cr
    s = sl if sl >= sr else sr
    fl0 = ml
    fl1 = ml * ul + pl
    fl2 = (el + pl) * ul
    fr0 = mr
    fr1 = mr * ur + pr
    fr2 = (er + pr) * ur
    fout[0] = 0.5 * (fl0 + fr0) - 0.5 * s * (rr - rl)
    fout[1] = 0.5 * (fl1 + fr1) - 0.5 * s * (mr - ml)
    fout[2] = 0.5 * (fl2 + fr2) - 0.5 * s * (er - el)
    return 0


@njit(cache=True)
def _euler_cell(i, m, rho, mom, ene, rho_l, mom_l, ene_l, rho_r, mom_r, ene_r,
                rp, mp, ep, dt, dxi, gamma, qL, rout):
    # residual rows (rho, mom, ene) for one cell; returns status
    if i == 0:
        rout[0] = (rho - qL[0]) / dt
        rout[1] = (mom - qL[1]) / dt
        rout[2] = (ene - qL[2]) / dt
        return 0
    fl = np.empty(3)
    fr = np.empty(3)
    st = _rusanov(rho_l, mom_l, ene_l, rho, mom, ene, gamma, fl)
    if st != 0:
        return st
    st = _rusanov(rho, mom, ene, rho_r, mom_r, ene_r, gamma, fr)
    if st != 0:
        return st
    rout[0] = (rho - rp) / dt + (fr[0] - fl[0]) / dxi
    rout[1] = (mom - mp) / dt + (fr[1] - fl[1]) / dxi
    rout[2] = (ene - ep) / dt + (fr[2] - fl[2]) / dxi
    return 0


@njit(cache=True)
def euler_residual_full(q, qprev, dt, dx, gamma, qL):
    d = q.shape[0]
    m = d // 3
    out = np.empty(d)
    rout = np.empty(3)
    status = 0
    for i in range(m):
        il = i - 1 if i > 0 else 0
        ir = i + 1 if i < m - 1 else m - 1
        st = _euler_cell(i, m, q[i], q[m + i], q[2 * m + i],
                         q[il], q[m + il], q[2 * m + il],
                         q[ir], q[m + ir], q[2 * m + ir],
                         qprev[i], qprev[m + i], qprev[2 * m + i],
                         dt, dx[i], gamma, qL, rout)
        if st != 0:
            status = st
            break
        out[i] = rout[0]
        out[m + i] = rout[1]
        out[2 * m + i] = rout[2]
    return out, status


@njit(cache=True)
def euler_residual_cells(q_sub, qprev_sub, dt, dx_cells, gamma, qL,
                         gcells, pos, lft, rgt, m, s):
    k = gcells.shape[0]
    out = np.empty(3 * k)
    rout = np.empty(3)
    status = 0
    for j in range(k):
        i = gcells[j]
        p0 = pos[j]
        pl = lft[j] if lft[j] >= 0 else p0
        pr = rgt[j] if rgt[j] >= 0 else p0
        st = _euler_cell(i, m, q_sub[p0], q_sub[s + p0], q_sub[2 * s + p0],
                         q_sub[pl], q_sub[s + pl], q_sub[2 * s + pl],
                         q_sub[pr], q_sub[s + pr], q_sub[2 * s + pr],
                         qprev_sub[p0], qprev_sub[s + p0], qprev_sub[2 * s + p0],
                         dt, dx_cells[j], gamma, qL, rout)
        if st != 0:
            status = st
            break
        out[j] = rout[0]
        out[k + j] = rout[1]
        out[2 * k + j] = rout[2]
    return out, status


@njit(cache=True)
def decode_rows(wu, y):
    n, p = wu.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(p):
            acc += wu[i, j] * y[j]
        out[i] = acc
    return out


@njit(cache=True)
def mlp_forward(flat, dims, acts, x):
    nl = dims.shape[0] - 1
    cur = x.astype(np.float64).copy()
    off = 0
    for l in range(nl):
        din = dims[l]
        dout = dims[l + 1]
        nxt = np.empty(dout)
        for o in range(dout):
            acc = flat[off + dout * din + o]
            base = off + o * din
            for j in range(din):
                acc += flat[base + j] * cur[j]
            if acts[l] == 1 and acc <= 0.0:
                acc = np.exp(acc) - 1.0
            nxt[o] = acc
        off += dout * din + dout
        cur = nxt
    return cur


@njit(cache=True)
def mlp_jacobian(flat, dims, acts, x):
    nl = dims.shape[0] - 1
    din0 = dims[0]
    cur = x.astype(np.float64).copy()
    jac = np.eye(din0)
    off = 0
    for l in range(nl):
        din = dims[l]
        dout = dims[l + 1]
        nxt = np.empty(dout)
        jnew = np.empty((dout, din0))
        for o in range(dout):
            acc = flat[off + dout * din + o]
            base = off + o * din
            for j in range(din):
                acc += flat[base + j] * cur[j]
            for q in range(din0):
                jacc = 0.0
                for j in range(din):
                    jacc += flat[base + j] * jac[j, q]
                jnew[o, q] = jacc
            if acts[l] == 1 and acc <= 0.0:
                e = np.exp(acc)
                acc = e - 1.0
                for q in range(din0):
                    jnew[o, q] *= e
            nxt[o] = acc
        off += dout * din + dout
        cur = nxt
        jac = jnew
    return cur, jac


@njit(cache=True)
def dense_objective(z, use_mlp, dflat, ddims, dacts, wu, prev_full,
                    pcode, dt, dx, b0, b1, bc_code, qL):
    if use_mlp == 1:
        y = mlp_forward(dflat, ddims, dacts, z)
    else:
        y = z
    x = decode_rows(wu, y)
    if pcode == 0:
        return burgers_residual_full(x, prev_full, dt, dx, b0, b1, bc_code), 0
    out, status = euler_residual_full(x, prev_full, dt, dx, b0, qL)
    return out, status


@njit(cache=True)
def dense_normal_eqs(z, f0, h, use_mlp, dflat, ddims, dacts, wu, prev_full,
                     pcode, dt, dx, b0, b1, bc_code, qL):
    r = z.shape[0]
    n = f0.shape[0]
    jay = np.empty((n, r))
    zp = z.copy()
    status = 0
    for j in range(r):
        hj = h * max(1.0, abs(z[j]))
        zp[j] = z[j] + hj
        fj, st = dense_objective(zp, use_mlp, dflat, ddims, dacts, wu, prev_full,
                                 pcode, dt, dx, b0, b1, bc_code, qL)
        zp[j] = z[j]
        if st != 0:
            status = st
            break
        for i in range(n):
            jay[i, j] = (fj[i] - f0[i]) / hj
    jtj = np.zeros((r, r))
    jtf = np.zeros(r)
    if status == 0:
        for i in range(n):
            fi = f0[i]
            for a in range(r):
                va = jay[i, a]
                jtf[a] += va * fi
                for b in range(a, r):
                    jtj[a, b] += va * jay[i, b]
        for a in range(r):
            for b in range(a):
                jtj[a, b] = jtj[b, a]
    return jtj, jtf, status


@njit(cache=True)
def submesh_objective(z, use_mlp, dflat, ddims, dacts, wu_sub, prev_sub,
                      pcode, dt, dx_cells, b0, b1, bc_code, qL,
                      gcells, pos, lft, rgt, m, s,
                      mode, w_restr, gappy, ecsw_w):
    if use_mlp == 1:
        y = mlp_forward(dflat, ddims, dacts, z)
    else:
        y = z
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
    nrow = rc.shape[0]
    scaled = np.empty(nrow)
    for i in range(nrow):
        scaled[i] = rc[i] / w_restr[i]
    if mode == 2:
        for i in range(nrow):
            scaled[i] = ecsw_w[i] * scaled[i]
        return scaled, 0
    nhr = gappy.shape[0]
    out = np.empty(nhr)
    for a in range(nhr):
        acc = 0.0
        for i in range(nrow):
            acc += gappy[a, i] * scaled[i]
        out[a] = acc
    return out, 0


@njit(cache=True)
def damped_solve(jtj, diag, lam, jtf):
    """Solve (jtj + lam*diag(diag)) dz = -jtf by Gaussian elimination.

    Returns (dz, ok); ok=0 flags a vanishing pivot (caller falls back).
    """
    r = jtf.shape[0]
    a = np.empty((r, r + 1))
    for i in range(r):
        for j in range(r):
            a[i, j] = jtj[i, j]
        a[i, i] += lam * diag[i]
        a[i, r] = -jtf[i]
    for col in range(r):
        piv = col
        best = abs(a[col, col])
        for i in range(col + 1, r):
            if abs(a[i, col]) > best:
                best = abs(a[i, col])
                piv = i
        if best == 0.0:
            return np.zeros(r), 0
        if piv != col:
            for j in range(col, r + 1):
                tmp = a[col, j]
                a[col, j] = a[piv, j]
                a[piv, j] = tmp
        inv = 1.0 / a[col, col]
        for i in range(col + 1, r):
            fac = a[i, col] * inv
            if fac != 0.0:
                for j in range(col, r + 1):
                    a[i, j] -= fac * a[col, j]
    dz = np.empty(r)
    for i in range(r - 1, -1, -1):
        acc = a[i, r]
        for j in range(i + 1, r):
            acc -= a[i, j] * dz[j]
        dz[i] = acc / a[i, i]
    return dz, 1


@njit(cache=True)
def submesh_normal_eqs(z, f0, h, use_mlp, dflat, ddims, dacts, wu_sub, prev_sub,
                       pcode, dt, dx_cells, b0, b1, bc_code, qL,
                       gcells, pos, lft, rgt, m, s,
                       mode, w_restr, gappy, ecsw_w):
    r = z.shape[0]
    n = f0.shape[0]
    jay = np.empty((n, r))
    zp = z.copy()
    status = 0
    for j in range(r):
        hj = h * max(1.0, abs(z[j]))
        zp[j] = z[j] + hj
        fj, st = submesh_objective(zp, use_mlp, dflat, ddims, dacts, wu_sub, prev_sub,
                                   pcode, dt, dx_cells, b0, b1, bc_code, qL,
                                   gcells, pos, lft, rgt, m, s,
                                   mode, w_restr, gappy, ecsw_w)
        zp[j] = z[j]
        if st != 0:
            status = st
            break
        for i in range(n):
            jay[i, j] = (fj[i] - f0[i]) / hj
    jtj = np.zeros((r, r))
    jtf = np.zeros(r)
    if status == 0:
        for i in range(n):
            fi = f0[i]
            for a in range(r):
                va = jay[i, a]
                jtf[a] += va * fi
                for b in range(a, r):
                    jtj[a, b] += va * jay[i, b]
        for a in range(r):
            for b in range(a):
                jtj[a, b] = jtj[b, a]
    return jtj, jtf, status
