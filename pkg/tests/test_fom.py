import numpy as np
import pytest

from helpers import godunov_flux_oracle, rusanov_flux_oracle, shock_position_oracle
from hrom import fom
from hrom.errors import (DataError, NonphysicalStateError, PreconditionError,
                         SolverError)


@pytest.fixture
def burgers_periodic():
    return fom.burgers_problem(n_cells=4, nu=0.0, bc="periodic", t_final=1.0,
                               dt_ref=1.0, length=4.0)


class TestBurgersResidual:
    def test_constant_state_is_steady_periodic(self):
        p = fom.burgers_problem(n_cells=16, nu=1e-2, bc="periodic")
        u = np.full(16, 1.3)
        r = fom.residual(p, 1.3, u, [u.copy()], dt=0.1)
        assert np.abs(r).max() <= 1e-14

    def test_hand_evaluated_godunov_fluxes(self, burgers_periodic):
        # M=4, u=(1,2,1,1), same previous state, nu=0, dt=1, dx=1
        p = burgers_periodic
        u = np.array([1.0, 2.0, 1.0, 1.0])
        r = fom.residual(p, 1.0, u, [u.copy()], dt=1.0)
        faces = [godunov_flux_oracle(u[i], u[(i + 1) % 4]) for i in range(4)]
        expected = np.array([faces[i] - faces[i - 1] for i in range(4)])
        assert np.allclose(r, expected, atol=1e-14)

    def test_inflow_row_is_dirichlet_penalty(self):
        p = fom.burgers_problem(n_cells=8, nu=0.0)
        u = fom.initial_state(p, 1.5)
        u[0] += 0.25
        r = fom.residual(p, 1.5, u, [u.copy()], dt=0.01)
        assert abs(r[0] - (u[0] - 1.5) / 0.01) <= 1e-10

    def test_nan_state_rejected(self):
        p = fom.burgers_problem(n_cells=8)
        u = fom.initial_state(p, 1.0)
        u[3] = np.nan
        with pytest.raises(DataError):
            fom.residual(p, 1.0, u, [u.copy()], dt=0.01)

    def test_history_length_enforced(self):
        p = fom.burgers_problem(n_cells=8)
        u = fom.initial_state(p, 1.0)
        with pytest.raises(PreconditionError):
            fom.residual(p, 1.0, u, [u, u], dt=0.01)


class TestEulerResidual:
    def test_flux_divergence_against_scripted_rusanov(self):
        p = fom.euler_problem(n_cells=6, t_final=1.0, dt_ref=1.0)
        q = fom.initial_state(p, 3.0)
        m = p.n_cells
        dt = 1e6  # time-derivative term negligible against flux divergence
        r = fom.residual(p, 3.0, q, [q.copy()], dt=dt)
        qf = q.reshape(3, m)
        dx = p.mesh.cell_measures
        for i in range(1, m - 1):
            fl = rusanov_flux_oracle(qf[:, i - 1], qf[:, i], p.gamma)
            fr = rusanov_flux_oracle(qf[:, i], qf[:, min(i + 1, m - 1)], p.gamma)
            expected = (qf[:, i] - qf[:, i]) / dt + (fr - fl) / dx[i]
            got = np.array([r[i], r[m + i], r[2 * m + i]])
            assert np.allclose(got, expected, atol=1e-9)

    def test_nonphysical_state_raises(self):
        p = fom.euler_problem(n_cells=6)
        q = fom.initial_state(p, 3.0)
        q[0] = -1.0  # negative density
        with pytest.raises(NonphysicalStateError):
            fom.residual(p, 3.0, q, [q.copy()], dt=0.01)


class TestSubmeshResidual:
    @pytest.mark.parametrize("kind", ["burgers", "euler1d"])
    def test_full_magic_set_matches_full_residual_bitwise(self, kind):
        if kind == "burgers":
            p = fom.burgers_problem(n_cells=30)
        else:
            p = fom.euler_problem(n_cells=30)
        rng = np.random.default_rng(5)
        u = fom.initial_state(p, 2.5 if kind == "euler1d" else 1.5)
        up = u * (1 + 0.01 * rng.random(u.size))
        plan = fom.submesh_indexing(p, np.arange(30))
        full = fom.residual(p, 2.0, u, [up], dt=1e-3)
        sub = fom.residual_on_submesh(p, 2.0, u[plan.submesh_dofs],
                                      [up[plan.submesh_dofs]], 1e-3, plan)
        assert np.array_equal(sub, full[plan.magic_dofs])

    def test_single_cell_matches_component_bitwise(self):
        p = fom.burgers_problem(n_cells=100)
        rng = np.random.default_rng(6)
        u = 1.0 + rng.random(100)
        up = 1.0 + rng.random(100)
        plan = fom.submesh_indexing(p, [5])
        full = fom.residual(p, 1.0, u, [up], dt=1e-3)
        sub = fom.residual_on_submesh(p, 1.0, u[plan.submesh_dofs],
                                      [up[plan.submesh_dofs]], 1e-3, plan)
        assert sub.shape == (1,)
        assert sub[0] == full[5]

    def test_restriction_consistency_random_sets(self):
        rng = np.random.default_rng(7)
        for p, mu in ((fom.burgers_problem(n_cells=64), 1.4),
                      (fom.euler_problem(n_cells=64), 3.0)):
            base = fom.initial_state(p, mu)
            for _ in range(20):
                k = int(rng.integers(1, 12))
                cells = rng.choice(p.n_cells, size=k, replace=False)
                plan = fom.submesh_indexing(p, cells)
                u = base * (1 + 0.02 * rng.random(base.size))
                up = base * (1 + 0.02 * rng.random(base.size))
                full = fom.residual(p, mu, u, [up], dt=1e-3)
                sub = fom.residual_on_submesh(p, mu, u[plan.submesh_dofs],
                                              [up[plan.submesh_dofs]], 1e-3, plan)
                assert np.array_equal(sub, full[plan.magic_dofs])

    def test_work_independent_of_mesh_size(self):
        small = fom.submesh_indexing(fom.burgers_problem(n_cells=100), [40, 41, 55])
        large = fom.submesh_indexing(fom.burgers_problem(n_cells=800), [40, 41, 55])
        assert small.submesh_dofs.size == large.submesh_dofs.size
        assert small.magic_dofs.size == large.magic_dofs.size

    def test_coverage_gap_names_missing_cell(self):
        p = fom.burgers_problem(n_cells=20)
        with pytest.raises(PreconditionError, match="cell 4"):
            fom.submesh_indexing(p, [5], submesh_cells=[5, 6])


class TestStencil:
    def test_interior(self):
        p = fom.burgers_problem(n_cells=10)
        assert fom.stencil_of(p, [3]).tolist() == [2, 3, 4]

    def test_boundary_truncates(self):
        p = fom.burgers_problem(n_cells=10)
        assert fom.stencil_of(p, [0]).tolist() == [0, 1]

    def test_union(self):
        p = fom.burgers_problem(n_cells=10)
        assert fom.stencil_of(p, [2, 3]).tolist() == [1, 2, 3, 4]

    def test_periodic_wraps(self):
        p = fom.burgers_problem(n_cells=10, bc="periodic")
        assert fom.stencil_of(p, [0]).tolist() == [0, 1, 9]

    def test_out_of_range(self):
        p = fom.burgers_problem(n_cells=10)
        with pytest.raises(PreconditionError):
            fom.stencil_of(p, [10])

    def test_closure_is_superset(self):
        p = fom.burgers_problem(n_cells=30)
        cells = np.array([4, 9, 20])
        sten = fom.stencil_of(p, cells)
        again = fom.stencil_of(p, sten)
        assert set(sten).issubset(set(again))


class TestSolveFom:
    def test_periodic_conservation(self):
        p = fom.burgers_problem(n_cells=40, nu=1.0, bc="periodic",
                                ic_kind="hump", t_final=0.2, dt_ref=0.01)
        states, _ = fom.solve_fom(p, 1.0)
        masses = [fom.total_mass(p, s) for s in states]
        assert max(abs(m - masses[0]) for m in masses) <= 1e-8
        # strong viscosity relaxes the profile toward its mean
        assert np.ptp(states[-1]) < 0.25 * np.ptp(states[0])

    def test_shock_speed_matches_rankine_hugoniot(self):
        p = fom.burgers_problem(n_cells=200, nu=1e-3, ic_kind="step",
                                step_position=0.5, t_final=0.25, dt_ref=1.25e-3)
        mu = 1.5
        states, times = fom.solve_fom(p, mu)
        front = shock_position_oracle(states[-1])
        expected = (0.5 + mu / 2.0 * times[-1]) * 200
        assert abs(front + 0.5 - expected) <= 1.0  # within one cell

    def test_sod_self_convergence(self):
        # coarse solution within 2% of a 4x-refined reference (density, L2)
        mu = 10.0  # classic 10:1 pressure ratio via p_right = 1
        coarse = fom.euler_problem(n_cells=200, t_final=0.2, dt_ref=5e-4,
                                   right_state=(0.125, 0.0, 1.0))
        fine = fom.euler_problem(n_cells=800, t_final=0.2, dt_ref=5e-4,
                                 right_state=(0.125, 0.0, 1.0))
        sc, _ = fom.solve_fom(coarse, mu)
        sf, _ = fom.solve_fom(fine, mu, tol=1e-9)  # f64 noise floor at 2400 dofs
        rho_c = sc[-1][:200]
        rho_f = sf[-1][:800].reshape(200, 4).mean(axis=1)
        err = np.linalg.norm(rho_c - rho_f) / np.linalg.norm(rho_f)
        assert err <= 0.02

    def test_euler_positivity_along_trajectory(self):
        p = fom.euler_problem(n_cells=60, t_final=0.1, dt_ref=1e-3)
        states, _ = fom.solve_fom(p, 4.0)
        for s in states:
            rho, _, pr = fom.euler_primitives(p, s)
            assert (rho > 0).all() and (pr > 0).all()

    def test_newton_failure_reports_step(self):
        p = fom.burgers_problem(n_cells=20, t_final=1.0, dt_ref=0.5)
        import hrom.fom as fommod
        old = fommod.NEWTON_MAX_ITER
        fommod.NEWTON_MAX_ITER = 0
        try:
            with pytest.raises(SolverError) as err:
                fom.solve_fom(p, 1.5)
            assert err.value.step_index == 1
        finally:
            fommod.NEWTON_MAX_ITER = old


class TestJacobianStructure:
    @pytest.mark.parametrize("kind,M", [("burgers", 12), ("euler1d", 8)])
    def test_banded_in_cell_ordering(self, kind, M):
        p = (fom.burgers_problem(n_cells=M) if kind == "burgers"
             else fom.euler_problem(n_cells=M))
        c, m = p.n_fields, p.n_cells
        mu = 1.5 if kind == "burgers" else 3.0
        u = fom.initial_state(p, mu)
        up = u.copy()
        r0 = fom.residual(p, mu, u, [up], dt=1e-3)
        d = c * m
        jac = np.zeros((d, d))
        for j in range(d):
            pert = u.copy()
            eps = 1e-7 * max(1.0, abs(u[j]))
            pert[j] += eps
            jac[:, j] = (fom.residual(p, mu, pert, [up], dt=1e-3) - r0) / eps
        perm = np.array([[f * m + i for f in range(c)] for i in range(m)]).ravel()
        jac_cell = jac[np.ix_(perm, perm)]
        bw = 3 * c
        scale = np.abs(jac_cell).max()
        for a in range(d):
            for b in range(d):
                if abs(a - b) > bw:
                    assert abs(jac_cell[a, b]) <= 1e-10 * scale

    def test_sparse_jacobian_matches_dense_fd(self):
        p = fom.euler_problem(n_cells=10)
        mu = 3.0
        u = fom.initial_state(p, mu)
        up = u * 1.01
        sp = fom.sparse_residual_jacobian(p, mu, u, up, 1e-3).toarray()
        r0 = fom.residual(p, mu, u, [up], dt=1e-3)
        dense = np.zeros_like(sp)
        for j in range(u.size):
            pert = u.copy()
            eps = 1.5e-8 * max(1.0, abs(u[j]))
            pert[j] += eps
            dense[:, j] = (fom.residual(p, mu, pert, [up], dt=1e-3) - r0) / eps
        assert np.allclose(sp, dense, rtol=1e-4, atol=1e-4 * np.abs(dense).max())
