"""Independent evaluation of the two variational functionals, duality-gap
certification, complementarity residuals, and the interior-regularity probe.

Everything here consumes only Solution-level fields (or serialized copies) and
the problem data, never solver internals, so a certificate is reproducible
bit-for-bit from saved files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec
from .model import ProblemSpec

__all__ = [
    "GapReport",
    "eval_B",
    "eval_A_relaxed",
    "certify",
    "regularity_probe",
    "translation_diagnostic",
    "save_report",
    "load_report",
]

_CAP_SLACK = 1e-7   # relative round-off allowance on the density cap
_ZERO_DENSITY = 1e-14


@dataclass
class GapReport:
    A_value: float
    B_value: float
    gap: float
    relative_gap: float
    complementarity_interior: float
    complementarity_terminal: float
    energy_residual: float
    energy_residual_rel: float

    def as_dict(self):
        return dict(self.__dict__)


def _midpoint_density(m):
    return 0.5 * (m[1:] + m[:-1])


def _face_to_center(w, grid: GridSpec):
    """Average face momenta onto cell centers, per axis."""
    wc = np.empty_like(w)
    for ax in range(grid.d):
        wc[:, ax] = 0.5 * (w[:, ax] + np.roll(w[:, ax], 1, axis=1 + ax))
    return wc


def eval_B(m, w, problem: ProblemSpec, grid: GridSpec) -> float:
    """Transport-side cost: kinetic perspective term + running cost + terminal.

    Cells with zero density contribute 0 when the momentum also vanishes and
    an infinite sentinel otherwise; densities above the cap (beyond round-off)
    also return the sentinel.
    """
    m = np.asarray(m, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    c = problem.coupling
    if c.hard_cap and np.max(m) > c.mbar * (1.0 + _CAP_SLACK) + 1e-12:
        return np.inf
    if np.min(m) < -1e-12:
        return np.inf
    m_mid = _midpoint_density(m)
    wc = _face_to_center(w, grid)
    wc_norm = np.linalg.norm(wc, axis=1)
    zero_m = m_mid <= _ZERO_DENSITY
    w_scale = max(1.0, float(np.max(wc_norm))) if wc_norm.size else 1.0
    # the threshold leaves headroom over exact-feasibility repair round-off;
    # a genuine convention breach puts O(1) momentum on a vacuum cell
    if np.any(zero_m & (wc_norm > 1e-5 * w_scale)):
        return np.inf
    s_conj = problem.H.s_conj
    V = problem.sample_V(grid)[None]
    kinetic = np.zeros_like(m_mid)
    ok = ~zero_m
    # m * L(x, w/m) with L(x, q) = |q|^(s') / s' + V(x)
    kinetic[ok] = (wc_norm[ok] ** s_conj / (m_mid[ok] ** (s_conj - 1.0)) / s_conj
                   + (m_mid * np.broadcast_to(V, m_mid.shape))[ok])
    running = np.asarray(c.eval_F(np.clip(m_mid, 0.0, c.mbar) if c.hard_cap else m_mid))
    weight = grid.dt * grid.cell_volume
    total = float(np.sum(kinetic + running) * weight)
    g_vals = problem.sample_g(grid)
    total += float(np.sum(g_vals * m[-1]) * grid.cell_volume)
    return total


def eval_A_relaxed(u, alpha_ac, alpha_T, m0, problem: ProblemSpec, grid: GridSpec) -> float:
    """Potential-side relaxed cost; the terminal layer is priced at the cap."""
    alpha_ac = np.asarray(alpha_ac, dtype=np.float64)
    alpha_T = np.asarray(alpha_T, dtype=np.float64)
    if np.min(alpha_ac) < -1e-12 or np.min(alpha_T) < -1e-12:
        raise ValueError("alpha inputs must be nonnegative")
    c = problem.coupling
    weight = grid.dt * grid.cell_volume
    total = float(np.sum(c.eval_Fstar(alpha_ac)) * weight)
    total += c.mbar * float(np.sum(alpha_T) * grid.cell_volume)
    total -= float(np.sum(np.asarray(u)[0] * np.asarray(m0)) * grid.cell_volume)
    return total


def complementarity_residuals(solution, problem: ProblemSpec, grid: GridSpec):
    """Normalized saturation defects for the interior and terminal prices."""
    c = problem.coupling
    m_mid = _midpoint_density(solution.m)
    weight = grid.dt * grid.cell_volume
    # a price mass at round-off scale carries no saturation information and
    # would make the normalized residual pure noise
    g_scale = max(1.0, float(np.max(np.abs(problem.sample_g(grid)))))
    mass_floor = 1e-10 * g_scale
    beta_mass = float(np.sum(solution.beta) * weight)
    if beta_mass > mass_floor:
        interior = float(np.sum(solution.beta * (c.mbar - m_mid)) * weight) \
            / (beta_mass * c.mbar)
    else:
        interior = 0.0
    bt_mass = float(np.sum(solution.beta_T) * grid.cell_volume)
    if bt_mass > mass_floor:
        terminal = float(np.sum(solution.beta_T * (c.mbar - solution.m[-1]))
                         * grid.cell_volume) / (bt_mass * c.mbar)
    else:
        terminal = 0.0
    return interior, terminal


def energy_residual(solution, problem: ProblemSpec, grid: GridSpec):
    """Defect of the discrete energy identity tying the transport pair, the
    prices, and the boundary pairings together."""
    from .solver import _K_apply  # shared discrete space-time gradient

    u, m = solution.u, solution.m
    s = problem.H.s
    s_conj = problem.H.s_conj
    V = problem.sample_V(grid)[None]
    _, b = _K_apply(u, grid)
    bnorm = np.linalg.norm(b, axis=1)
    m_mid = _midpoint_density(m)
    # m (-H + Du . D_p H + f + beta) = m (|Du|^s / s' + V + f(m) + beta)
    integrand = m_mid * (bnorm**s / s_conj + V + problem.coupling.eval_f(m_mid)
                         + solution.beta)
    weight = grid.dt * grid.cell_volume
    lhs = float(np.sum(integrand) * weight)
    lhs += problem.coupling.mbar * float(np.sum(solution.beta_T) * grid.cell_volume)
    m0 = problem.sample_m0(grid)
    g_vals = problem.sample_g(grid)
    rhs = float(np.sum(m0 * u[0]) * grid.cell_volume) \
        - float(np.sum(m[-1] * g_vals) * grid.cell_volume)
    scale = max(abs(lhs), abs(rhs), 1e-12)
    return abs(lhs - rhs), abs(lhs - rhs) / scale


def certify(solution, problem: ProblemSpec, grid: GridSpec, mask_tol: float = 1e-3) -> GapReport:
    """Recompute both functionals from the solution fields alone and report the
    duality gap, complementarity, and energy defects."""
    c = problem.coupling
    m_mid = _midpoint_density(solution.m)
    # the price is supported on the saturated set; off it, the positive part
    # of alpha_hat - f is iteration noise that the conjugate's cap slope would
    # amplify, so the certificate uses the masked field
    alpha_ac = np.asarray(c.eval_f(m_mid)) + solution.beta
    # the terminal price is supported on the terminal saturated set; off it,
    # (u(T-) - g)_+ is iteration noise that the cap price would amplify
    sat_T = solution.m[-1] >= c.mbar * (1.0 - mask_tol)
    alpha_T = np.where(sat_T, solution.beta_T, 0.0)
    m0 = problem.sample_m0(grid)
    A = eval_A_relaxed(solution.u, alpha_ac, alpha_T, m0, problem, grid)
    B = eval_B(solution.m, solution.w, problem, grid)
    gap = A + B
    # normalize by the magnitude of the functionals' parts, not their net
    # values: those can cancel to zero for perfectly solvable problems, which
    # would make a net-value ratio degenerate
    weight = grid.dt * grid.cell_volume
    g_vals = problem.sample_g(grid)
    scale_A = float(np.sum(c.eval_Fstar(alpha_ac)) * weight
                    + c.mbar * np.sum(alpha_T) * grid.cell_volume
                    + abs(np.sum(solution.u[0] * m0)) * grid.cell_volume)
    scale_B = abs(B - float(np.sum(g_vals * solution.m[-1]) * grid.cell_volume)) \
        + abs(float(np.sum(g_vals * solution.m[-1]) * grid.cell_volume))
    rel = abs(gap) / max(scale_A, scale_B, abs(A), abs(B), 1e-12)
    comp_i, comp_t = complementarity_residuals(solution, problem, grid)
    e_abs, e_rel = energy_residual(solution, problem, grid)
    return GapReport(A_value=A, B_value=B, gap=gap, relative_gap=rel,
                     complementarity_interior=comp_i, complementarity_terminal=comp_t,
                     energy_residual=e_abs, energy_residual_rel=e_rel)


def regularity_probe(solution, grid: GridSpec, windows, terminal_slab: float = 0.1):
    """Interior price norms per time window vs the terminal concentration.

    For d=1 reports both the max and the L2 norm (the d/(d-1) exponent is
    infinite there); for d=2 the L2 norm is exactly the d/(d-1) norm.
    Also reports the L1 mass of the price on the final slab and of the
    terminal price.
    """
    t_mid = (np.arange(grid.nt) + 0.5) * grid.dt
    rows = []
    for (t1, t2) in windows:
        if not (0.0 <= t1 < t2 <= grid.T):
            raise ValueError(f"window ({t1}, {t2}) outside [0, T]")
        sel = (t_mid >= t1) & (t_mid <= t2)
        beta_w = solution.beta[sel]
        weight = grid.dt * grid.cell_volume
        rows.append({
            "t1": t1, "t2": t2,
            "max": float(np.max(beta_w)) if beta_w.size else 0.0,
            "l2": float(np.sqrt(np.sum(beta_w**2) * weight)),
            "l1": float(np.sum(beta_w) * weight),
        })
    slab = t_mid >= grid.T - terminal_slab
    out = {
        "windows": rows,
        "final_slab_l1": float(np.sum(solution.beta[slab]) * grid.dt * grid.cell_volume),
        "beta_T_l1": float(np.sum(solution.beta_T) * grid.cell_volume),
        "max_abs_u": float(np.max(np.abs(solution.u))),
    }
    return out


def _shift_space(slice_, shift, grid: GridSpec):
    """Sample slice_(x + shift) by periodic linear interpolation on each axis."""
    out = slice_
    for ax in range(grid.d):
        s = shift[ax] / grid.dx
        i0 = int(np.floor(s))
        frac = s - i0
        out = (1 - frac) * np.roll(out, -i0, axis=ax) + frac * np.roll(out, -(i0 + 1), axis=ax)
    return out


def _shifted_competitor(solution, grid: GridSpec, delta, eta: float,
                        zeta, zeta_p):
    """Space/time-translated (density, momentum) pair under the cutoff zeta."""
    m, w = solution.m, solution.w
    nt = grid.nt
    t_nodes = grid.time_nodes()
    zn = zeta(t_nodes)
    m_shift = np.empty_like(m)
    for k in range(nt + 1):
        tq = float(np.clip(t_nodes[k] + zn[k] * eta, 0.0, grid.T))
        tau = tq / grid.dt
        k0 = min(int(np.floor(tau)), nt - 1)
        lam = tau - k0
        slice_ = (1 - lam) * m[k0] + lam * m[k0 + 1]
        m_shift[k] = _shift_space(slice_, zn[k] * delta, grid)

    t_mid = (np.arange(nt) + 0.5) * grid.dt
    zm = zeta(t_mid)
    zpm = zeta_p(t_mid)
    m_mid = _midpoint_density(m)
    wc = _face_to_center(w, grid)
    # velocity at cell centers and midpoint times, guarded against vacuum
    v = np.zeros_like(wc)
    ok = m_mid > _ZERO_DENSITY
    for ax in range(grid.d):
        v[:, ax][ok] = wc[:, ax][ok] / m_mid[ok]
    w_shift = np.empty_like(w)
    m_shift_mid = _midpoint_density(m_shift)
    for k in range(nt):
        tq = float(np.clip(t_mid[k] + zm[k] * eta, 0.0, grid.T))
        tau_w = tq / grid.dt - 0.5
        tau_w = min(max(tau_w, 0.0), nt - 1.0)
        k0 = min(int(np.floor(tau_w)), max(nt - 2, 0))
        lam = tau_w - k0
        for ax in range(grid.d):
            v_slice = (1 - lam) * v[k0, ax] + lam * v[min(k0 + 1, nt - 1), ax]
            v_s = _shift_space(v_slice, zm[k] * delta, grid)
            v_s = v_s * (1.0 + eta * zpm[k]) - zpm[k] * delta[ax]
            w_center = m_shift_mid[k] * v_s
            # back to faces by adjacent-cell averaging; faces touching a
            # vacuum cell stay at rest so the reconstruction cannot smear
            # momentum onto zero-density cells (which eval_B prices at +inf)
            face = 0.5 * (w_center + np.roll(w_center, -1, axis=ax))
            vac = m_shift_mid[k] <= _ZERO_DENSITY
            face[vac | np.roll(vac, -1, axis=ax)] = 0.0
            w_shift[k, ax] = face
    return m_shift, w_shift


def translation_diagnostic(solution, problem: ProblemSpec, grid: GridSpec,
                           delta, eta: float) -> float:
    """Excess transport cost of the space/time-translated competitor.

    Uses the built-in cutoff zeta(t) = sin^2(pi t / T) so the shifted times
    stay inside (0, T); the competitor velocity is rescaled by the time
    dilation and corrected by the cutoff drift.  The baseline is the
    zero-shift competitor built by the identical reconstruction, so the
    cell-to-face roundtrip bias cancels and the returned difference isolates
    the translation effect (exactly 0 at zero shift).
    """
    delta = np.atleast_1d(np.asarray(delta, dtype=np.float64))
    if np.max(np.abs(delta)) > 0.25 or abs(eta) > 0.25 * grid.T:
        raise ValueError("shift too large")

    def zeta(t):
        return np.sin(np.pi * t / grid.T) ** 2

    def zeta_p(t):
        return 2 * np.sin(np.pi * t / grid.T) * np.cos(np.pi * t / grid.T) * np.pi / grid.T

    m0s, w0s = _shifted_competitor(solution, grid, np.zeros_like(delta), 0.0,
                                   zeta, zeta_p)
    m1s, w1s = _shifted_competitor(solution, grid, delta, eta, zeta, zeta_p)
    B0 = eval_B(m0s, w0s, problem, grid)
    B1 = eval_B(m1s, w1s, problem, grid)
    return B1 - B0


def save_report(path, report: GapReport) -> None:
    with open(path, "w") as fh:
        for key, val in report.as_dict().items():
            fh.write(f"{key} = {val!r}\n")


def load_report(path) -> GapReport:
    vals = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                key, raw = line.split("=", 1)
                vals[key.strip()] = float(raw)
    return GapReport(**vals)
