"""Continuous problem data: Hamiltonian, coupling with density cap, initial and
terminal data, plus conjugate evaluators and hypothesis validators.

The Hamiltonian family is H(x, p) = |p|^s / s - V(x) with s > 1, so the
Lagrangian is L(x, q) = H*(x, -q) = |q|^{s'}/s' + V(x).  Couplings are
f(x, m) = kappa * m^{theta-1} on [0, mbar] (kappa = 0 allowed), with the
running-cost primitive F extended to +inf above the cap, or the penalized
finite-everywhere variant used to approximate the hard cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FourierSeries",
    "HamiltonianSpec",
    "CouplingSpec",
    "ProblemSpec",
    "ValidationReport",
    "penalize",
    "validate",
]


@dataclass(frozen=True)
class FourierSeries:
    """Real trigonometric polynomial given by coefficients {k, re, im}.

    value(x) = sum_j re_j * cos(2 pi k_j . x) - im_j * sin(2 pi k_j . x),
    i.e. each entry is the real part of (re + i*im) * exp(2 pi i k . x).
    """

    d: int
    terms: tuple = ()  # tuple of (k, re, im); k an int (d=1) or pair (d=2)

    @staticmethod
    def from_config(d: int, entries) -> "FourierSeries":
        terms = []
        for e in entries:
            k = e["k"]
            if d == 1:
                k = int(k) if not isinstance(k, (list, tuple)) else int(k[0])
            else:
                k = tuple(int(v) for v in k)
            terms.append((k, float(e.get("re", 0.0)), float(e.get("im", 0.0))))
        return FourierSeries(d=d, terms=tuple(terms))

    def __call__(self, *coords) -> np.ndarray:
        """Evaluate on meshgrid-ready coordinate arrays, one per axis."""
        coords = [np.asarray(c, dtype=np.float64) for c in coords]
        if len(coords) != self.d:
            raise ValueError(f"expected {self.d} coordinate arrays")
        out = np.zeros(np.broadcast_shapes(*(c.shape for c in coords)))
        for k, re, im in self.terms:
            phase = 2.0 * np.pi * (k * coords[0] if self.d == 1
                                   else k[0] * coords[0] + k[1] * coords[1])
            out += re * np.cos(phase) - im * np.sin(phase)
        return out

    def sample(self, grid) -> np.ndarray:
        """Values at cell centers of a GridSpec."""
        xs = grid.cell_centers()
        if self.d == 1:
            return self(xs)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        return self(X, Y)


def constant_series(d: int, value: float) -> FourierSeries:
    return FourierSeries(d=d, terms=((0 if d == 1 else (0, 0), float(value), 0.0),))


@dataclass(frozen=True)
class HamiltonianSpec:
    """H(x, p) = |p|^s / s - V(x)."""

    s: float = 2.0
    V: FourierSeries = None

    def __post_init__(self):
        if self.s <= 1:
            raise ValueError("growth exponent s must exceed 1")

    @property
    def s_conj(self) -> float:
        return self.s / (self.s - 1.0)

    def _V(self, x) -> float:
        if self.V is None:
            return 0.0
        x = np.atleast_1d(x)
        return float(self.V(*x))

    def eval_H(self, x, p) -> float:
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        return float(np.linalg.norm(p) ** self.s / self.s) - self._V(x)

    def eval_Hstar(self, x, q) -> float:
        q = np.atleast_1d(np.asarray(q, dtype=np.float64))
        return float(np.linalg.norm(q) ** self.s_conj / self.s_conj) + self._V(x)

    def eval_L(self, x, q) -> float:
        q = np.atleast_1d(np.asarray(q, dtype=np.float64))
        return self.eval_Hstar(x, -q)


@dataclass(frozen=True)
class CouplingSpec:
    """Running coupling f(x, m) with hard cap mbar, or its penalized variant.

    kind "zero": f = 0.  kind "power": f = kappa * m^(theta-1) on [0, mbar].
    kind "penalized": finite everywhere, f(m) = f_base(min(m, mbar))
    + (1/eps) * ((m - mbar)_+)^(theta-1); no hard cap.
    """

    kind: str = "zero"
    kappa: float = 0.0
    theta: float = 2.0
    mbar: float = 2.0
    cbar: float = None
    eps: float = None  # penalty width, "penalized" kind only

    def __post_init__(self):
        if self.kind not in ("zero", "power", "penalized"):
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.mbar <= 1:
            raise ValueError("density cap mbar must exceed 1")
        if self.theta <= 1:
            raise ValueError("theta must exceed 1")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.kind == "penalized" and (self.eps is None or self.eps <= 0):
            raise ValueError("penalized coupling needs eps > 0")
        if self.cbar is None:
            object.__setattr__(self, "cbar", 0.01 * self.mbar)

    @property
    def hard_cap(self) -> bool:
        return self.kind in ("zero", "power")

    def _f_base(self, m):
        if self.kappa == 0.0 or self.kind == "zero":
            return np.zeros_like(np.asarray(m, dtype=np.float64))
        return self.kappa * np.asarray(m, dtype=np.float64) ** (self.theta - 1.0)

    def eval_f(self, m):
        """Marginal cost f(x, m); continuous extension at m = mbar."""
        m = np.asarray(m, dtype=np.float64)
        base = self._f_base(np.minimum(m, self.mbar))
        if self.kind == "penalized":
            excess = np.maximum(m - self.mbar, 0.0)
            return base + excess ** (self.theta - 1.0) / self.eps
        return base

    def eval_F(self, m):
        """Primitive F(x, m) = int_0^m f; +inf outside [0, mbar] for hard caps."""
        m = np.asarray(m, dtype=np.float64)
        mc = np.minimum(m, self.mbar)
        base = self.kappa * mc**self.theta / self.theta if self.kind != "zero" else np.zeros_like(mc)
        if self.kind == "penalized":
            excess = np.maximum(m - self.mbar, 0.0)
            fbar = float(self._f_base(np.asarray(self.mbar)))
            return base + fbar * excess + excess**self.theta / (self.theta * self.eps)
        out = np.where((m < -1e-300) | (m > self.mbar * (1 + 1e-9)), np.inf, base)
        return out if out.shape else float(out)

    def f_cap(self) -> float:
        """f at the cap, f(x, mbar)."""
        return float(self._f_base(np.asarray(self.mbar)))

    def eval_Fstar(self, alpha):
        """Exact convex conjugate of F over its domain.

        Zero for alpha <= 0; interior branch where the slope f(m) = alpha has a
        solution below the cap; slope-mbar linear branch beyond f(mbar); for
        the penalized kind the supra-cap branch follows the penalty inverse.
        """
        alpha = np.asarray(alpha, dtype=np.float64)
        out = np.zeros(alpha.shape if alpha.shape else (1,))
        a = np.atleast_1d(alpha)
        fbar = self.f_cap()
        if self.kind == "zero" or self.kappa == 0.0:
            interior = np.zeros_like(a)
            m_at = np.where(a > 0, self.mbar, 0.0)
        else:
            # invert alpha = kappa m^(theta-1) on (0, mbar)
            m_int = (np.maximum(a, 0.0) / self.kappa) ** (1.0 / (self.theta - 1.0))
            m_at = np.clip(m_int, 0.0, self.mbar)
            interior = a * m_at - self.kappa * m_at**self.theta / self.theta
        Fbar = self.kappa * self.mbar**self.theta / self.theta
        linear = a * self.mbar - Fbar
        out = np.where(a <= 0, 0.0, np.where(a <= fbar, interior, linear))
        if self.kind == "penalized":
            excess = (self.eps * np.maximum(a - fbar, 0.0)) ** (1.0 / (self.theta - 1.0))
            mo = self.mbar + excess
            Fo = Fbar + fbar * excess + excess**self.theta / (self.theta * self.eps)
            out = np.where(a > fbar, a * mo - Fo, out)
        return out if alpha.shape else float(out.reshape(()))

    def fstar_prime(self, alpha):
        """Maximizer m(alpha) of alpha*m - F(m): the demand at price alpha.

        A subgradient selection at kinks (alpha = 0 maps to 0).
        """
        a = np.asarray(alpha, dtype=np.float64)
        if self.kind == "zero" or self.kappa == 0.0:
            m = np.where(a > 0, self.mbar, 0.0)
        else:
            m = np.clip((np.maximum(a, 0.0) / self.kappa) ** (1.0 / (self.theta - 1.0)),
                        0.0, self.mbar)
        if self.kind == "penalized":
            fbar = self.f_cap()
            over = a > fbar
            m = np.where(over, self.mbar + (self.eps * np.maximum(a - fbar, 0.0))
                         ** (1.0 / (self.theta - 1.0)), m)
        return m


def penalize(coupling: CouplingSpec, eps: float) -> CouplingSpec:
    """Finite-everywhere approximation of a hard-capped coupling."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not coupling.hard_cap:
        raise ValueError("coupling is already penalized")
    return CouplingSpec(kind="penalized", kappa=coupling.kappa, theta=coupling.theta,
                        mbar=coupling.mbar, cbar=coupling.cbar, eps=eps)


@dataclass(frozen=True)
class ProblemSpec:
    T: float
    d: int
    H: HamiltonianSpec
    coupling: CouplingSpec
    m0: FourierSeries
    g: FourierSeries

    def sample_m0(self, grid) -> np.ndarray:
        """Initial density at cell centers, normalized to unit total mass."""
        vals = self.m0.sample(grid)
        total = float(np.sum(vals)) * grid.cell_volume
        if total <= 0:
            raise ValueError("initial density has nonpositive total mass")
        return vals / total

    def sample_g(self, grid) -> np.ndarray:
        return self.g.sample(grid)

    def sample_V(self, grid) -> np.ndarray:
        if self.H.V is None:
            return np.zeros(grid.space_shape())
        return self.H.V.sample(grid)


@dataclass
class ValidationReport:
    ok: bool
    hard_failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def validate(problem: ProblemSpec, grid) -> ValidationReport:
    """Check the standing hypotheses on grid samples.

    Hard failures: cap not above 1, initial mass not 1, or initial density
    entering the slack band below the cap.  Quadratic-Hamiltonian curvature
    bounds hold with constant 1 at s = 2 and are flagged (not fatal) otherwise.
    """
    rep = ValidationReport(ok=True)
    c = problem.coupling
    if c.mbar <= 1.0:
        rep.hard_failures.append(f"density cap mbar = {c.mbar} must exceed 1")
    m0 = problem.m0.sample(grid)
    total = float(np.sum(m0)) * grid.cell_volume
    if total <= 0:
        rep.hard_failures.append("initial density mass is nonpositive")
        rep.ok = False
        return rep
    m0n = m0 / total
    mass = float(np.sum(m0n)) * grid.cell_volume
    rep.info["mass_m0"] = mass
    if abs(mass - 1.0) > 1e-10:
        rep.hard_failures.append(f"initial mass {mass} not 1 after normalization")
    if np.min(m0n) < 0:
        rep.hard_failures.append("initial density is negative somewhere")
    if np.max(m0n) >= c.mbar - c.cbar:
        rep.hard_failures.append(
            f"initial density max {np.max(m0n):.6g} reaches mbar - cbar = {c.mbar - c.cbar:.6g}")
    # monotonicity of f by finite differences
    ms = np.linspace(0.0, c.mbar if c.hard_cap else 2 * c.mbar, 64)
    fv = c.eval_f(ms)
    if np.any(np.diff(fv) < -1e-12):
        rep.hard_failures.append("coupling f is not non-decreasing")
    if abs(float(c.eval_f(np.asarray(0.0)))) > 1e-12:
        rep.hard_failures.append("coupling must vanish at m = 0")
    s = problem.H.s
    if s == 2.0:
        rep.info["curvature_bounds"] = "satisfied with constant 1"
    else:
        rep.warnings.append(
            f"s = {s}: uniform Hessian bounds on H fail at p = 0 or infinity; "
            "interior-regularity guarantees do not apply, run permitted")
    # growth constants: |p|^s/s - max V <= H <= |p|^s/s - min V
    if problem.H.V is not None:
        Vv = problem.H.V.sample(grid)
        rep.info["growth_constant"] = float(max(1.0, np.max(np.abs(Vv))))
    else:
        rep.info["growth_constant"] = 1.0
    rep.ok = not rep.hard_failures
    return rep
