"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles the per-cell finite-volume residuals, the
row-wise basis matvec and the small MLP forward/Jacobian passes. Setting the
environment variable ``HROM_KERNELS=numpy`` (before first import) selects a
pure-numpy fallback with identical semantics; ``benchmarks/bench_kernels.py``
compares the two.
"""

import os

_requested = os.environ.get("HROM_KERNELS", "numba").strip().lower()

if _requested not in ("numba", "numpy"):
    raise ValueError(f"HROM_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import numba_impl as _impl
    except ImportError:  # numba missing: degrade rather than fail
        from . import numpy_impl as _impl
else:
    from . import numpy_impl as _impl

backend_name = _impl.backend_name

burgers_residual_full = _impl.burgers_residual_full
burgers_residual_cells = _impl.burgers_residual_cells
euler_residual_full = _impl.euler_residual_full
euler_residual_cells = _impl.euler_residual_cells
decode_rows = _impl.decode_rows
mlp_forward = _impl.mlp_forward
mlp_jacobian = _impl.mlp_jacobian
dense_objective = _impl.dense_objective
dense_normal_eqs = _impl.dense_normal_eqs
submesh_objective = _impl.submesh_objective
submesh_normal_eqs = _impl.submesh_normal_eqs
damped_solve = _impl.damped_solve

PCODE_BURGERS = 0
PCODE_EULER = 1

BC_INFLOW_OUTFLOW = 0
BC_PERIODIC = 1

MODE_COLLOCATE = 0
MODE_GAPPY = 1
MODE_ECSW = 2


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    import numpy as np

    u = np.array([1.0, 2.0, 1.0, 1.0])
    up = u.copy()
    dx = np.full(4, 0.25)
    burgers_residual_full(u, up, 0.1, dx, 1e-3, 1.0, BC_INFLOW_OUTFLOW)
    burgers_residual_full(u, up, 0.1, dx, 1e-3, 1.0, BC_PERIODIC)
    gc = np.array([1, 2], dtype=np.int64)
    pos = np.array([1, 2], dtype=np.int64)
    lft = np.array([0, 1], dtype=np.int64)
    rgt = np.array([2, 3], dtype=np.int64)
    burgers_residual_cells(u, up, 0.1, dx[:2], 1e-3, 1.0, BC_INFLOW_OUTFLOW,
                           gc, pos, lft, rgt, 4)
    q = np.concatenate([np.ones(4), np.zeros(4), np.full(4, 2.5)])
    qL = np.array([1.0, 0.0, 2.5])
    euler_residual_full(q, q.copy(), 0.1, dx, 1.4, qL)
    euler_residual_cells(q, q.copy(), 0.1, dx[:2], 1.4, qL, gc, pos, lft, rgt, 4, 4)
    wu = np.ones((4, 2))
    y = np.array([1.0, 2.0])
    decode_rows(wu, y)
    flat = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    dims = np.array([2, 2], dtype=np.int64)
    acts = np.array([0], dtype=np.int64)
    mlp_forward(flat, dims, acts, y)
    mlp_jacobian(flat, dims, acts, y)
    z = np.array([1.0, 2.0])
    f, _ = dense_objective(z, 1, flat, dims, acts, wu, np.zeros(4),
                           PCODE_BURGERS, 0.1, dx, 1e-3, 1.0, BC_INFLOW_OUTFLOW, qL)
    dense_normal_eqs(z, f, 1e-7, 1, flat, dims, acts, wu, np.zeros(4),
                     PCODE_BURGERS, 0.1, dx, 1e-3, 1.0, BC_INFLOW_OUTFLOW, qL)
    wus = np.ones((4, 2))
    wr = np.ones(2)
    gap = np.zeros((0, 0))
    ew = np.zeros(0)
    fs, _ = submesh_objective(z, 1, flat, dims, acts, wus, np.zeros(4),
                              PCODE_BURGERS, 0.1, dx[:2], 1e-3, 1.0, BC_INFLOW_OUTFLOW,
                              qL, gc, pos, lft, rgt, 4, 4,
                              MODE_COLLOCATE, wr, gap, ew)
    submesh_normal_eqs(z, fs, 1e-7, 1, flat, dims, acts, wus, np.zeros(4),
                       PCODE_BURGERS, 0.1, dx[:2], 1e-3, 1.0, BC_INFLOW_OUTFLOW,
                       qL, gc, pos, lft, rgt, 4, 4,
                       MODE_COLLOCATE, wr, gap, ew)
    damped_solve(np.eye(2), np.ones(2), 1e-3, y)
