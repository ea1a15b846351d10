import numpy as np
import pytest

from mfgcap.grid import GridSpec
from mfgcap.model import (CouplingSpec, FourierSeries, HamiltonianSpec, ProblemSpec,
                          penalize, validate, constant_series)


def brute_force_conjugate(fn, q, lo=-50.0, hi=50.0, n=400001):
    """Dense 1-D search oracle for sup_p p*q - fn(p)."""
    ps = np.linspace(lo, hi, n)
    return float(np.max(ps * q - fn(ps)))


class TestHamiltonian:
    def test_quadratic_self_conjugate(self):
        H = HamiltonianSpec(s=2.0)
        assert H.eval_H(0.3, np.array([3.0, 4.0])) == pytest.approx(12.5)
        assert H.eval_Hstar(0.3, np.array([3.0, 4.0])) == pytest.approx(12.5)

    def test_lagrangian_even(self):
        H = HamiltonianSpec(s=2.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            q = rng.normal(size=2)
            assert H.eval_L(0.1, q) == pytest.approx(H.eval_L(0.1, -q))

    def test_cubic_conjugate_oracle(self):
        H = HamiltonianSpec(s=3.0)
        for q in [0.5, 1.0, 2.0, -1.3]:
            expected = abs(q) ** 1.5 * (2.0 / 3.0)
            assert H.eval_Hstar(0.0, q) == pytest.approx(expected)
            oracle = brute_force_conjugate(lambda p: np.abs(p) ** 3 / 3.0, q,
                                           lo=-10, hi=10, n=2000001)
            assert H.eval_Hstar(0.0, q) == pytest.approx(oracle, abs=1e-6)

    def test_potential_enters(self):
        V = FourierSeries(d=1, terms=((1, 1.0, 0.0),))  # cos(2 pi x)
        H = HamiltonianSpec(s=2.0, V=V)
        assert H.eval_H(0.0, 1.0) == pytest.approx(0.5 - 1.0)
        assert H.eval_Hstar(0.0, 1.0) == pytest.approx(0.5 + 1.0)
        assert H.eval_L(0.5, 1.0) == pytest.approx(0.5 + np.cos(np.pi))

    def test_invalid_exponent(self):
        with pytest.raises(ValueError):
            HamiltonianSpec(s=1.0)


class TestCoupling:
    def test_power_fstar_values(self):
        c = CouplingSpec(kind="power", kappa=1.0, theta=2.0, mbar=2.0)
        assert c.eval_Fstar(-1.0) == 0.0
        assert c.eval_Fstar(1.0) == pytest.approx(0.5)
        assert c.eval_Fstar(3.0) == pytest.approx(4.0)

    def test_zero_fstar(self):
        c = CouplingSpec(kind="zero", mbar=2.0)
        assert c.eval_Fstar(-1.0) == 0.0
        assert c.eval_Fstar(0.0) == 0.0
        assert c.eval_Fstar(2.0) == pytest.approx(4.0)

    def test_F_domain(self):
        c = CouplingSpec(kind="power", kappa=1.0, theta=2.0, mbar=2.0)
        assert c.eval_F(1.0) == pytest.approx(0.5)
        assert c.eval_F(2.0) == pytest.approx(2.0)
        assert c.eval_F(2.5) == np.inf
        assert c.eval_F(-0.5) == np.inf

    def test_fstar_lower_bound(self):
        # conjugate inequality at the cap: Fstar(alpha) >= alpha*mbar - F(mbar)
        c = CouplingSpec(kind="power", kappa=0.7, theta=3.0, mbar=1.5)
        Fbar = c.eval_F(c.mbar)
        for a in np.linspace(-2, 6, 41):
            assert c.eval_Fstar(a) >= a * c.mbar - Fbar - 1e-12

    def test_fenchel_young(self):
        rng = np.random.default_rng(1)
        for c in [CouplingSpec(kind="power", kappa=1.0, theta=2.0, mbar=2.0),
                  CouplingSpec(kind="power", kappa=0.5, theta=2.5, mbar=3.0),
                  CouplingSpec(kind="zero", mbar=2.0)]:
            ms = np.linspace(0, c.mbar, 2001)
            Fs = np.asarray(c.eval_F(ms))
            for _ in range(50):
                alpha = rng.normal(scale=3.0)
                m = rng.random() * c.mbar
                assert c.eval_F(m) + c.eval_Fstar(alpha) >= alpha * m - 1e-10
                # conjugate equals the dense-search sup to 1e-8
                sup = np.max(alpha * ms - Fs)
                assert c.eval_Fstar(alpha) == pytest.approx(sup, abs=1e-6)

    def test_fstar_prime_is_argmax(self):
        c = CouplingSpec(kind="power", kappa=1.0, theta=2.0, mbar=2.0)
        for a in [0.5, 1.5, 2.5, 5.0]:
            m = c.fstar_prime(a)
            assert a * m - c.eval_F(m) == pytest.approx(c.eval_Fstar(a), abs=1e-12)


class TestPenalize:
    def test_inactive_below_cap(self):
        base = CouplingSpec(kind="power", kappa=1.0, theta=2.0, mbar=2.0)
        pen = penalize(base, 0.1)
        for m in [0.0, 0.5, 1.0, 2.0]:
            assert pen.eval_f(m) == pytest.approx(float(base.eval_f(np.asarray(m))))

    def test_formula_above_cap(self):
        pen = penalize(CouplingSpec(kind="zero", mbar=2.0, theta=2.0), 0.1)
        assert pen.eval_f(3.0) == pytest.approx(10.0)

    def test_monotone_in_eps(self):
        base = CouplingSpec(kind="zero", mbar=2.0, theta=2.0)
        vals = [penalize(base, e).eval_f(3.0) for e in [1.0, 0.3, 0.1, 0.03]]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        assert penalize(base, 1e-8).eval_f(2.5) > 1e6

    def test_preserves_zero_and_monotone(self):
        pen = penalize(CouplingSpec(kind="power", kappa=1.0, theta=2.0, mbar=2.0), 0.2)
        assert pen.eval_f(0.0) == 0.0
        ms = np.linspace(0, 5, 200)
        assert np.all(np.diff(pen.eval_f(ms)) >= -1e-12)

    def test_penalized_fstar_conjugate(self):
        pen = penalize(CouplingSpec(kind="power", kappa=1.0, theta=2.0, mbar=2.0), 0.25)
        ms = np.linspace(0, 20, 400001)
        Fs = pen.eval_F(ms)
        for a in [-1.0, 0.5, 2.0, 3.0, 10.0]:
            sup = float(np.max(a * ms - Fs))
            assert pen.eval_Fstar(a) == pytest.approx(sup, abs=1e-6)
            m = pen.fstar_prime(a)
            assert a * m - pen.eval_F(m) == pytest.approx(pen.eval_Fstar(a), abs=1e-10)

    def test_invalid(self):
        base = CouplingSpec(kind="zero", mbar=2.0)
        with pytest.raises(ValueError):
            penalize(base, 0.0)
        with pytest.raises(ValueError):
            penalize(penalize(base, 0.1), 0.1)


class TestFourier:
    def test_constant(self):
        s = constant_series(1, 2.5)
        assert np.allclose(s(np.linspace(0, 1, 7)), 2.5)

    def test_cosine(self):
        s = FourierSeries.from_config(1, [{"k": 1, "re": 0.8}])
        xs = np.array([0.0, 0.25, 0.5])
        assert np.allclose(s(xs), 0.8 * np.cos(2 * np.pi * xs))

    def test_2d(self):
        s = FourierSeries.from_config(2, [{"k": [1, 0], "re": 1.0},
                                          {"k": [0, 2], "im": 0.5}])
        val = s(np.array(0.25), np.array(0.125))
        expected = np.cos(np.pi / 2) - 0.5 * np.sin(np.pi / 2)
        assert val == pytest.approx(expected)


def tp_like_problem(mbar=3.0, cbar=None, amp=0.8):
    m0 = FourierSeries.from_config(1, [{"k": 0, "re": 1.0}, {"k": 1, "re": amp}])
    g = FourierSeries.from_config(1, [{"k": 1, "re": 1.0}])
    return ProblemSpec(T=1.0, d=1, H=HamiltonianSpec(s=2.0),
                       coupling=CouplingSpec(kind="zero", mbar=mbar, cbar=cbar),
                       m0=m0, g=g)


class TestValidate:
    def test_pass(self):
        grid = GridSpec(d=1, nx=32, nt=8, T=1.0)
        rep = validate(tp_like_problem(), grid)
        assert rep.ok and not rep.hard_failures

    def test_uniform_pass(self):
        prob = ProblemSpec(T=1.0, d=1, H=HamiltonianSpec(s=2.0),
                           coupling=CouplingSpec(kind="zero", mbar=2.0, cbar=0.5),
                           m0=constant_series(1, 1.0), g=constant_series(1, 0.0))
        rep = validate(prob, GridSpec(d=1, nx=8, nt=4, T=1.0))
        assert rep.ok

    def test_slack_violation(self):
        # max m0 = 1.9 reaches mbar - cbar = 1.8
        prob = tp_like_problem(mbar=2.0, cbar=0.2, amp=0.9)
        rep = validate(prob, GridSpec(d=1, nx=64, nt=4, T=1.0))
        assert not rep.ok
        assert any("cbar" in msg for msg in rep.hard_failures)

    def test_s3_flagged_not_fatal(self):
        prob = ProblemSpec(T=1.0, d=1, H=HamiltonianSpec(s=3.0),
                           coupling=CouplingSpec(kind="zero", mbar=3.0),
                           m0=constant_series(1, 1.0), g=constant_series(1, 0.0))
        rep = validate(prob, GridSpec(d=1, nx=8, nt=4, T=1.0))
        assert rep.ok and rep.warnings

    def test_mass_normalized(self):
        grid = GridSpec(d=1, nx=32, nt=8, T=1.0)
        prob = tp_like_problem()
        m0 = prob.sample_m0(grid)
        assert float(np.sum(m0)) * grid.cell_volume == pytest.approx(1.0, abs=1e-12)
