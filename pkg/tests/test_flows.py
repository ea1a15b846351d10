import numpy as np
import pytest

from mfgcap.flows import (MollifiedFields, PathEnsemble, _gauss_kernel,
                          _mollify_space, _velocity_batch, empirical_density,
                          energy_residual, grid_kinetic_energy, load_ensemble,
                          marginal_error, mollify, perturbation_test,
                          sample_paths, save_ensemble)
from mfgcap.grid import GridSpec, interp_velocity
from mfgcap.model import (CouplingSpec, HamiltonianSpec, ProblemSpec,
                          constant_series)
from mfgcap.solver import Solution


def flat_problem(mbar=2.0):
    return ProblemSpec(T=1.0, d=1, H=HamiltonianSpec(s=2.0),
                       coupling=CouplingSpec(kind="zero", mbar=mbar),
                       m0=constant_series(1, 1.0), g=constant_series(1, 0.0))


def synthetic_solution(grid, m_val=1.0, w_val=0.0):
    m = np.full(grid.scalar_shape(), m_val)
    w = np.full(grid.momentum_shape(), w_val)
    u = np.zeros(grid.scalar_shape())
    beta = np.zeros((grid.nt, grid.nx))
    return Solution(grid=grid, u=u, m=m, w=w, beta=beta, beta_raw=beta,
                    beta_T=np.zeros(grid.nx))


class TestMollify:
    def grid(self):
        return GridSpec(d=1, nx=32, nt=8, T=1.0)

    def test_constant_invariance(self):
        grid = self.grid()
        fields = mollify(synthetic_solution(grid), flat_problem(), 0.05)
        assert np.max(np.abs(fields.m_eps - 1.0)) <= 1e-12
        assert fields.floor == pytest.approx(1.0)

    def test_mass_preserved(self):
        grid = self.grid()
        sol = synthetic_solution(grid)
        bump = np.zeros(grid.nx)
        bump[5] = grid.nx  # near-point mass, unit total
        sol.m[:] = bump
        fields = mollify(sol, flat_problem(), 0.03)
        for k in range(grid.nt + 1):
            assert np.sum(fields.m_eps[k]) * grid.dx == pytest.approx(1.0, abs=1e-10)

    def test_semigroup(self):
        grid = GridSpec(d=1, nx=128, nt=2, T=1.0)
        sol = synthetic_solution(grid)
        x = grid.cell_centers()
        sol.m[:] = 1.0 + 0.8 * np.cos(2 * np.pi * x)
        eps = 0.02
        one = mollify(sol, flat_problem(), eps)
        two_direct = mollify(sol, flat_problem(), 2 * eps)
        again = _mollify_space(one.m_eps, _gauss_kernel(eps * np.sqrt(3), grid.nx), 1)
        assert np.max(np.abs(two_direct.m_eps - again)) <= 1e-6

    def test_eps_validation(self):
        grid = self.grid()
        for eps in (0.0, -0.1, 0.25, 0.5):
            with pytest.raises(ValueError):
                mollify(synthetic_solution(grid), flat_problem(), eps)

    def test_floor_positive(self):
        grid = self.grid()
        sol = synthetic_solution(grid)
        sol.m[:] = 0.0
        sol.m[:, 10] = grid.nx
        fields = mollify(sol, flat_problem(mbar=100.0), 0.05)
        assert fields.floor > 0.0


class TestVelocityBatch:
    def test_matches_scalar_interp(self):
        grid = GridSpec(d=1, nx=16, nt=8, T=1.0)
        rng = np.random.default_rng(5)
        sol = synthetic_solution(grid)
        sol.m[:] = 1.0 + 0.5 * rng.random(sol.m.shape)
        sol.w[:] = rng.normal(size=sol.w.shape)
        fields = mollify(sol, flat_problem(mbar=10.0), 0.05)
        for t in (0.0, 0.13, 0.5, 0.87, 1.0):
            xs = rng.random(40)
            fast = _velocity_batch(fields, t, xs)
            slow = np.array([interp_velocity(fields.m_eps, fields.w_eps, t,
                                             np.array([x]), grid)[0]
                             for x in xs])
            assert np.max(np.abs(fast - slow)) <= 1e-12


class TestSamplePaths:
    def test_constant_field_straight_lines(self):
        grid = GridSpec(d=1, nx=32, nt=16, T=1.0)
        vbar = 0.4
        fields = mollify(synthetic_solution(grid, w_val=vbar), flat_problem(), 0.05)
        ens = sample_paths(fields, np.ones(grid.nx), 200, seed=7,
                           problem=flat_problem())
        t = grid.time_nodes()
        expect = (ens.points[:, 0, 0][:, None] + vbar * t[None, :]) % 1.0
        err = np.abs((ens.points[:, :, 0] - expect + 0.5) % 1.0 - 0.5)
        assert np.max(err) <= 1e-9
        # action decomposition on the constant field
        assert np.max(np.abs(ens.kinetic - vbar**2 / 2)) <= 1e-8
        assert np.max(np.abs(ens.running)) <= 1e-12

    def test_zero_velocity_constant_paths(self):
        grid = GridSpec(d=1, nx=16, nt=8, T=1.0)
        fields = mollify(synthetic_solution(grid), flat_problem(), 0.05)
        ens = sample_paths(fields, np.ones(grid.nx), 50, seed=3)
        assert np.max(np.abs(np.diff(ens.points[:, :, 0], axis=1))) == 0.0

    def test_deterministic(self):
        grid = GridSpec(d=1, nx=16, nt=8, T=1.0)
        sol = synthetic_solution(grid, w_val=0.2)
        x = grid.cell_centers()
        sol.m[:] = 1.0 + 0.3 * np.cos(2 * np.pi * x)
        fields = mollify(sol, flat_problem(), 0.05)
        m0 = sol.m[0]
        a = sample_paths(fields, m0, 100, seed=11)
        b = sample_paths(fields, m0, 100, seed=11)
        assert np.array_equal(a.points, b.points)
        c = sample_paths(fields, m0, 100, seed=12)
        assert not np.array_equal(a.points, c.points)

    def test_invalid_n(self):
        grid = GridSpec(d=1, nx=16, nt=8, T=1.0)
        fields = mollify(synthetic_solution(grid), flat_problem(), 0.05)
        with pytest.raises(ValueError):
            sample_paths(fields, np.ones(grid.nx), 0, seed=0)

    def test_start_points_follow_m0(self):
        grid = GridSpec(d=1, nx=32, nt=4, T=1.0)
        fields = mollify(synthetic_solution(grid), flat_problem(), 0.05)
        x = grid.cell_centers()
        m0 = 1.0 + 0.8 * np.cos(2 * np.pi * x)
        m0 /= np.sum(m0) * grid.dx
        ens = sample_paths(fields, m0, 20000, seed=1)
        emp = empirical_density(ens, 0)
        assert np.sum(np.abs(emp - m0)) * grid.dx <= 2 * (20000**-0.5 + grid.dx)


class TestMarginalError:
    def test_constant_baseline(self):
        grid = GridSpec(d=1, nx=16, nt=8, T=1.0)
        fields = mollify(synthetic_solution(grid, w_val=0.3), flat_problem(), 0.05)
        ens = sample_paths(fields, np.ones(grid.nx), 4000, seed=21)
        rep = marginal_error(ens, np.ones(grid.scalar_shape()), grid)
        assert np.max(rep["l1"]) <= 2 * (4000**-0.5 + grid.dx)

    def test_error_shrinks_with_n(self):
        grid = GridSpec(d=1, nx=16, nt=4, T=1.0)
        fields = mollify(synthetic_solution(grid, w_val=0.3), flat_problem(), 0.05)
        m = np.ones(grid.scalar_shape())
        errs = []
        for N in (500, 2000, 8000):
            vals = []
            for seed in range(5):
                ens = sample_paths(fields, np.ones(grid.nx), N, seed=seed)
                vals.append(np.mean(marginal_error(ens, m, grid)["l1"]))
            errs.append(np.mean(vals))
        assert errs[2] < errs[1] < errs[0]

    def test_energy_comparison_constant(self):
        grid = GridSpec(d=1, nx=16, nt=8, T=1.0)
        vbar = 0.3
        fields = mollify(synthetic_solution(grid, w_val=vbar), flat_problem(), 0.05)
        ens = sample_paths(fields, np.ones(grid.nx), 500, seed=2)
        rep = marginal_error(ens, np.ones(grid.scalar_shape()), grid)
        grid_e = grid_kinetic_energy(np.ones(grid.scalar_shape()),
                                     np.full(grid.momentum_shape(), vbar), grid)
        assert rep["ensemble_energy"] == pytest.approx(vbar**2, abs=1e-8)
        assert rep["ensemble_energy"] <= grid_e + 1e-8


class TestEnergyResidual:
    def test_stationary_zero(self, stationary_solution, stationary_problem,
                             small_grid):
        fields = mollify(stationary_solution, stationary_problem, 0.05)
        ens = sample_paths(fields, stationary_problem.sample_m0(small_grid),
                           2000, seed=4, problem=stationary_problem)
        absres, relres = energy_residual(ens, stationary_solution,
                                         stationary_problem, small_grid)
        assert absres <= 1e-6


class TestPerturbation:
    def test_stationary_no_violations(self, stationary_solution,
                                      stationary_problem, small_grid):
        fields = mollify(stationary_solution, stationary_problem, 0.05)
        ens = sample_paths(fields, stationary_problem.sample_m0(small_grid),
                           500, seed=9, problem=stationary_problem)
        rep = perturbation_test(ens, fields, stationary_problem, small_grid,
                                t1=0.25, t2=0.75, K_perturb=10, seed=13)
        assert rep["violation_fraction"] == 0.0

    def test_alignment_validation(self, stationary_solution,
                                  stationary_problem, small_grid):
        fields = mollify(stationary_solution, stationary_problem, 0.05)
        ens = sample_paths(fields, stationary_problem.sample_m0(small_grid),
                           10, seed=0)
        with pytest.raises(ValueError):
            perturbation_test(ens, fields, stationary_problem, small_grid,
                              t1=0.3, t2=0.75, K_perturb=2, seed=0)
        with pytest.raises(ValueError):
            perturbation_test(ens, fields, stationary_problem, small_grid,
                              t1=0.0, t2=0.5, K_perturb=2, seed=0)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        grid = GridSpec(d=1, nx=16, nt=8, T=1.0)
        fields = mollify(synthetic_solution(grid, w_val=0.2), flat_problem(), 0.05)
        ens = sample_paths(fields, np.ones(grid.nx), 37, seed=6)
        p = tmp_path / "paths.mfgp"
        save_ensemble(p, ens)
        loaded = load_ensemble(p, grid)
        assert np.array_equal(loaded.points, ens.points)

    def test_magic_check(self, tmp_path):
        p = tmp_path / "bad.mfgp"
        p.write_bytes(b"NOPE" + b"\0" * 12)
        with pytest.raises(ValueError):
            load_ensemble(p, GridSpec(d=1, nx=16, nt=8, T=1.0))

    def test_grid_mismatch(self, tmp_path):
        grid = GridSpec(d=1, nx=16, nt=8, T=1.0)
        fields = mollify(synthetic_solution(grid), flat_problem(), 0.05)
        ens = sample_paths(fields, np.ones(grid.nx), 5, seed=0)
        p = tmp_path / "paths.mfgp"
        save_ensemble(p, ens)
        with pytest.raises(ValueError):
            load_ensemble(p, GridSpec(d=1, nx=16, nt=4, T=1.0))
