"""Augmented-Lagrangian splitting solver for the capped-density MFG.

Minimizes the potential-side functional

    sum F*(x, -d_t phi + H(x, D phi)) * dx^d dt
      + mbar * sum (phi(T) - g)_+ * dx^d  -  <phi(0), m0> dx^d

over potentials phi free at t = T (the terminal inequality phi(T) >= g is
priced at slope mbar, which is exactly how the relaxed functional charges a
terminal jump), by splitting the space-time gradient into an auxiliary
pointwise pair q = (a, b) plus a terminal trace copy q_T, and running the
classical three-step iteration: elliptic solve in phi, pointwise prox in
(q, q_T), multiplier ascent.  The multiplier converges to the (density,
momentum) pair of the transport-side problem, with the terminal multiplier
converging to the terminal density; the price fields are read off the
converged potential.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, divergence, gradient
from .model import CouplingSpec, HamiltonianSpec, ProblemSpec, validate

__all__ = [
    "SolverOptions",
    "SolverState",
    "Solution",
    "prox_pointwise",
    "elliptic_step",
    "multiplier_update",
    "run",
    "extract_price",
    "project_feasible",
]


@dataclass
class SolverOptions:
    r_admm: float = 1.0
    max_iters: int = 20000
    tol_feas: float = 1e-6
    tol_gap: float = 1e-3
    cg_tol: float = 1e-10
    cg_max_iters: int = 4000
    prox_tol: float = 1e-12
    mask_tol: float = 1e-3
    check_every: int = 25

    def __post_init__(self):
        for name in ("r_admm", "tol_feas", "tol_gap", "cg_tol", "prox_tol", "mask_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolverState:
    grid: GridSpec
    phi: np.ndarray            # (nt+1, *space)
    q_a: np.ndarray            # (nt, *space)
    q_b: np.ndarray            # (nt, d, *space)
    q_T: np.ndarray            # (*space,) terminal trace copy
    mu_m: np.ndarray           # (nt, *space), density multiplier >= 0
    mu_w: np.ndarray           # (nt, d, *space), cell-centered momentum multiplier
    mu_T: np.ndarray           # (*space,), terminal density multiplier >= 0
    history: list = field(default_factory=list)
    clamp_l1: float = 0.0

    @staticmethod
    def zeros(grid: GridSpec, m0: np.ndarray) -> "SolverState":
        X = grid.space_shape()
        return SolverState(
            grid=grid,
            phi=np.zeros((grid.nt + 1, *X)),
            q_a=np.zeros((grid.nt, *X)),
            q_b=np.zeros((grid.nt, grid.d, *X)),
            q_T=np.zeros(X),
            mu_m=np.broadcast_to(m0, (grid.nt, *X)).copy(),
            mu_w=np.zeros((grid.nt, grid.d, *X)),
            mu_T=np.asarray(m0, dtype=np.float64).copy(),
        )


@dataclass
class Solution:
    grid: GridSpec
    u: np.ndarray              # (nt+1, *space), u[nt] ~ u(T-)
    m: np.ndarray              # (nt+1, *space)
    w: np.ndarray              # (nt, d, *space) on faces
    beta: np.ndarray           # (nt, *space) at time midpoints, masked
    beta_raw: np.ndarray       # unmasked positive part
    beta_T: np.ndarray         # (*space,)
    diagnostics: dict = field(default_factory=dict)


# --- space-time gradient operator K and its exact adjoint -------------------

def _K_apply(phi: np.ndarray, grid: GridSpec):
    """phi at time nodes -> (a, b) at time midpoints, b centered at cells."""
    a = (phi[1:] - phi[:-1]) / grid.dt
    phib = 0.5 * (phi[1:] + phi[:-1])
    b = np.empty((grid.nt, grid.d, *grid.space_shape()))
    for ax in range(grid.d):
        sp = 1 + ax
        b[:, ax] = (np.roll(phib, -1, axis=sp) - np.roll(phib, 1, axis=sp)) / (2 * grid.dx)
    return a, b


def _K_adjoint(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> np.ndarray:
    out = np.zeros((grid.nt + 1, *grid.space_shape()))
    out[:-1] -= a / grid.dt
    out[1:] += a / grid.dt
    for ax in range(grid.d):
        sp = 1 + ax
        contrib = (np.roll(b[:, ax], 1, axis=sp) - np.roll(b[:, ax], -1, axis=sp)) / (2 * grid.dx)
        out[:-1] += 0.5 * contrib
        out[1:] += 0.5 * contrib
    return out


def _cg(apply_A, rhs, x0, tol, max_iters):
    """Plain conjugate gradient on a flat SPD operator; returns (x, iters, relres)."""
    x = x0.copy()
    r = rhs - apply_A(x)
    p = r.copy()
    rs = float(np.vdot(r, r))
    norm_rhs = float(np.linalg.norm(rhs))
    if norm_rhs == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    for it in range(max_iters):
        if np.sqrt(rs) <= tol * norm_rhs:
            return x, it, np.sqrt(rs) / norm_rhs
        Ap = apply_A(p)
        alpha = rs / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(np.vdot(r, r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, max_iters, np.sqrt(rs) / norm_rhs


class CGNonConvergence(RuntimeError):
    pass


def _elliptic_operator(phi, grid: GridSpec):
    """K^T K phi plus the terminal trace row weighted 1/dt; SPD, no kernel."""
    a, b = _K_apply(phi, grid)
    out = _K_adjoint(a, b, grid)
    out[grid.nt] += phi[grid.nt] / grid.dt
    return out


def elliptic_step(state: SolverState, problem: ProblemSpec, grid: GridSpec,
                  opts: SolverOptions, g_vals=None, m0=None) -> np.ndarray:
    """Quadratic potential step of the splitting iteration.

    Solves (K^T K + E_T^T E_T / dt) phi = K^T(q + mu/r) + terminal and initial
    data rows; Neumann in time (phi free at both ends, m0 enters the t=0 row,
    the terminal trace target enters the t=T row), periodic in space.
    Warm-started CG.
    """
    if g_vals is None:
        g_vals = problem.sample_g(grid)
    if m0 is None:
        m0 = problem.sample_m0(grid)
    r = opts.r_admm

    rhs = _K_adjoint(state.q_a + state.mu_m / r, state.q_b + state.mu_w / r, grid)
    rhs[0] += m0 / (grid.dt * r)
    rhs[grid.nt] += (state.q_T - state.mu_T / r) / grid.dt

    phi, iters, relres = _cg(lambda p: _elliptic_operator(p, grid), rhs,
                             state.phi, opts.cg_tol, opts.cg_max_iters)
    if relres > opts.cg_tol and iters >= opts.cg_max_iters:
        raise CGNonConvergence(f"elliptic CG stalled at relative residual {relres:.3e}")
    return phi


# --- pointwise prox ---------------------------------------------------------

def _c_of_mu_quadratic(mu, za, zb_sq, V, tau):
    """Fenchel argument c = -a + H(b) at multiplier value mu, quadratic H."""
    return -(za + tau * mu) + zb_sq / (2.0 * (1.0 + tau * mu) ** 2) - V


def prox_grid(za, zb, tau, coupling: CouplingSpec, H: HamiltonianSpec, V):
    """Prox of (a,b) -> F*(x, -a + H(x,b)) with step tau over a whole grid.

    zb axis 1 is the covector axis.  V is the sampled potential broadcastable
    to za's shape.  Quadratic Hamiltonian: parametrize by the multiplier
    mu = F*'(c) in [0, cap], so a = za + tau*mu, b = zb/(1 + tau*mu), and mu
    solves c(mu) = f(mu) by region analysis plus vectorized bisection on the
    kink (the paraboloid-projection case analysis).  Other exponents fall back
    to pointwise scalar solves.
    """
    if H.s == 2.0:
        zb_sq = np.sum(zb**2, axis=1)
        c0 = -za + zb_sq / 2.0 - V
        mu = np.zeros_like(za)
        if coupling.hard_cap:
            mbar = coupling.mbar
            fbar = coupling.f_cap()
            c_top = _c_of_mu_quadratic(mbar, za, zb_sq, V, tau)
            at_cap = (c0 > 0) & (c_top >= fbar)
            mu = np.where(at_cap, mbar, mu)
            hi = np.full_like(za, mbar)
        else:
            at_cap = np.zeros(za.shape, dtype=bool)
            hi = np.maximum(c0, 0.0) / tau + 1.0
        mid = (c0 > 0) & ~at_cap
        if np.any(mid):
            lo_v = np.zeros_like(za)
            hi_v = hi.copy()
            for _ in range(80):
                m_v = 0.5 * (lo_v + hi_v)
                gap = _c_of_mu_quadratic(m_v, za, zb_sq, V, tau) - coupling.eval_f(m_v)
                go_up = gap > 0
                lo_v = np.where(go_up, m_v, lo_v)
                hi_v = np.where(go_up, hi_v, m_v)
            mu = np.where(mid, 0.5 * (lo_v + hi_v), mu)
        a = za + tau * mu
        b = zb / (1.0 + tau * mu)[:, None]
        return a, b, mu
    # general exponent: pointwise scalar solves
    a = np.empty_like(za)
    b = np.empty_like(zb)
    mu = np.empty_like(za)
    it = np.nditer(za, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        bidx = (idx[0], slice(None)) + idx[1:]
        Vx = V[idx[1:]] if np.ndim(V) else float(V)
        av, bv, muv = _prox_scalar(float(za[idx]), np.array(zb[bidx]), tau,
                                   coupling, H, Vx, 1e-13)
        a[idx], b[bidx], mu[idx] = av, bv, muv
    return a, b, mu


def prox_terminal(z, g_vals, tau, mbar):
    """Prox of z -> mbar*(z - g)_+ : a one-sided soft threshold at g."""
    shifted = z - tau * mbar
    return np.where(shifted > g_vals, shifted, np.minimum(z, g_vals))


def _inner_shrink(bbar_norm, s, taumu, tol):
    """Solve rho + taumu * |bbar|^(s-2) * rho^(s-1) = 1 on [0, 1]."""
    if bbar_norm == 0.0 or taumu == 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    coef = taumu * bbar_norm ** (s - 2.0)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid + coef * mid ** (s - 1.0) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _prox_scalar(abar, bbar, tau, coupling, H, Vx, tol):
    s = H.s
    bnorm = float(np.linalg.norm(bbar))

    def c_of_mu(mu):
        rho = _inner_shrink(bnorm, s, tau * mu, tol)
        bm = bnorm * rho
        return -(abar + tau * mu) + bm**s / s - Vx, rho

    c0, _ = c_of_mu(0.0)
    if c0 <= 0.0:
        return abar, bbar.copy(), 0.0
    if coupling.hard_cap:
        hi = coupling.mbar
        c_top, rho_top = c_of_mu(hi)
        if c_top >= coupling.f_cap():
            return abar + tau * hi, bbar * rho_top, hi
    else:
        hi = max(c0, 0.0) / tau + 1.0
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        c, _ = c_of_mu(mid)
        if c - float(coupling.eval_f(np.asarray(mid))) > 0:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    c, rho = c_of_mu(mu)
    return abar + tau * mu, bbar * rho, mu


def prox_pointwise(x, abar, bbar, tau, coupling: CouplingSpec, H: HamiltonianSpec,
                   prox_tol: float = 1e-12):
    """Unique minimizer of |a - abar|^2/2 + |b - bbar|^2/2 + tau F*(x, -a + H(x, b)).

    Closed-form region analysis for the quadratic Hamiltonian, nested scalar
    bisection otherwise.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    bbar = np.atleast_1d(np.asarray(bbar, dtype=np.float64))
    Vx = 0.0 if H.V is None else float(H.V(*np.atleast_1d(x)))
    a, b, _ = _prox_scalar(float(abar), bbar, tau, coupling, H, Vx, prox_tol)
    if not (np.isfinite(a) and np.all(np.isfinite(b))):
        raise RuntimeError(f"prox root-find failed at x={x}, abar={abar}, bbar={bbar}")
    return a, b


def multiplier_update(state: SolverState, opts: SolverOptions) -> SolverState:
    """Dual ascent on the splitting constraints; density parts clamped at 0."""
    Ka, Kb = _K_apply(state.phi, state.grid)
    state.mu_m += opts.r_admm * (state.q_a - Ka)
    state.mu_w += opts.r_admm * (state.q_b - Kb)
    state.mu_T += opts.r_admm * (state.phi[state.grid.nt] - state.q_T)
    clamped = np.minimum(state.mu_m, 0.0)
    clamped_T = np.minimum(state.mu_T, 0.0)
    state.clamp_l1 = float(-np.sum(clamped) - np.sum(clamped_T))
    state.mu_m -= clamped
    state.mu_T -= clamped_T
    return state


# --- feasibility projection --------------------------------------------------

def _fill_mass(m, target_mass, grid: GridSpec, hi):
    """Restore the per-slice mass defect left by clipping, spreading it
    uniformly over non-saturated cells; a couple of passes suffice since the
    defects are at round-off-of-the-iteration scale."""
    vol = grid.cell_volume
    axes = tuple(range(1, m.ndim))
    shape = (-1,) + (1,) * (m.ndim - 1)
    for _ in range(32):
        mass = m.sum(axis=axes) * vol
        defect = target_mass - mass
        if np.max(np.abs(defect)) < 1e-15:
            break
        # surplus slices: scale down (stays in [0, hi]); deficit slices: add
        # uniformly where there is room under the cap
        scale = np.where(defect < 0, target_mass / np.maximum(mass, 1e-300), 1.0)
        m = m * scale.reshape(shape)
        room = (m < hi) if np.isfinite(hi) else np.ones(m.shape, dtype=bool)
        counts = np.maximum(room.sum(axis=axes), 1)
        add = np.maximum(defect, 0.0) / (counts * vol)
        m = np.clip(m + room * add.reshape(shape), 0.0, hi)
    return m


def _neg_lap(lam, grid: GridSpec):
    out = np.zeros_like(lam)
    for ax in range(grid.d):
        sp = 1 + ax
        out += (2 * lam - np.roll(lam, 1, axis=sp) - np.roll(lam, -1, axis=sp)) / grid.dx**2
    return out


def project_feasible(m, w, m0, grid: GridSpec, cap=None, tol=1e-12, cg_max=8000):
    """Repair (m, w) to exact discrete feasibility.

    The density is clipped into [0, cap] with a uniform mass re-fill per slice
    (the clip defects are tiny at convergence), then the momentum is moved the
    least-squares distance needed to satisfy the continuity equation exactly,
    one spatial Poisson solve per time slice (batched into a single CG).
    """
    m = np.asarray(m, dtype=np.float64).copy()
    w = np.asarray(w, dtype=np.float64).copy()
    hi = float(cap) if cap is not None else np.inf
    m[0] = m0
    m[1:] = np.clip(m[1:], 0.0, hi)
    target_mass = float(np.sum(m0)) * grid.cell_volume
    m[1:] = _fill_mass(m[1:], target_mass, grid, hi)

    # residual of the continuity equation, then absorb it into w:
    # solve (-Div Grad) lambda[k] = -e[k] per slice and set w -= Grad lambda
    e = (m[1:] - m[:-1]) / grid.dt
    for k in range(grid.nt):
        e[k] += divergence(w[k], grid)
    e -= e.mean(axis=tuple(range(1, e.ndim)), keepdims=True)

    scale = max(1.0, float(np.max(np.abs(w))) / grid.dx)
    if float(np.max(np.abs(e))) > 1e-13 * scale:
        lam, _, _ = _cg(lambda x: _neg_lap(x, grid), -e, np.zeros_like(e), tol, cg_max)
        for k in range(grid.nt):
            w[k] -= gradient(lam[k], grid)
    return m, w


# --- extraction and driver ----------------------------------------------------

def extract_price(u, m, problem: ProblemSpec, grid: GridSpec, mask_tol: float = 1e-3):
    """Read the running and terminal price off a converged potential.

    alpha_hat[k] = -(u[k+1]-u[k])/dt + H(x, Du) at time midpoints with the
    centered cell gradient; beta_T = (u(T-) - g)_+ off the free terminal trace.
    """
    u = np.asarray(u, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    g_vals = problem.sample_g(grid)
    V = problem.sample_V(grid)
    s = problem.H.s
    a, b = _K_apply(u, grid)
    bnorm = np.linalg.norm(b, axis=1)
    alpha_hat = -a + bnorm**s / s - V
    beta_T = np.maximum(u[grid.nt] - g_vals, 0.0)
    m_mid = 0.5 * (m[1:] + m[:-1])
    beta_raw = np.maximum(alpha_hat - problem.coupling.eval_f(m_mid), 0.0)
    mask = m_mid >= problem.coupling.mbar * (1.0 - mask_tol)
    beta = np.where(mask, beta_raw, 0.0)
    return beta, beta_raw, beta_T


def _div_centered(w_cells, grid: GridSpec):
    """Centered divergence of cell-located momentum (adjoint of the centered
    gradient used inside K)."""
    out = np.zeros(w_cells.shape[1:])
    for ax in range(grid.d):
        out += (np.roll(w_cells[ax], -1, axis=ax)
                - np.roll(w_cells[ax], 1, axis=ax)) / (2 * grid.dx)
    return out


def _staggered_from_multiplier(state: SolverState, m0, grid: GridSpec):
    """Face momentum and node density from the midpoint, cell-centered
    multiplier.

    Per slice the face momentum is the face average of the cell momentum,
    corrected by one spatial Poisson solve so its face divergence equals the
    centered divergence of the cell field.  Integrating the density in time
    from m0 then keeps its node averages locked to the multiplier density
    (the summation-by-parts identity of the trapezoidal coupling) and its
    terminal slice locked to the terminal multiplier.
    """
    nt = grid.nt
    w = np.empty((nt, grid.d, *grid.space_shape()))
    e = np.empty((nt, *grid.space_shape()))
    for k in range(nt):
        for ax in range(grid.d):
            w[k, ax] = 0.5 * (state.mu_w[k, ax]
                              + np.roll(state.mu_w[k, ax], -1, axis=ax))
        e[k] = _div_centered(state.mu_w[k], grid) - divergence(w[k], grid)
    # d=1: the face average already reproduces the centered divergence exactly;
    # skip the singular-Laplacian solve when the defect is at round-off
    scale = max(1.0, float(np.max(np.abs(w))) / grid.dx)
    if float(np.max(np.abs(e))) > 1e-12 * scale:
        lam, _, _ = _cg(lambda x: _neg_lap(x, grid), -e, np.zeros_like(e), 1e-12, 8000)
        for k in range(nt):
            w[k] -= gradient(lam[k], grid)
    m = np.empty((nt + 1, *grid.space_shape()))
    m[0] = m0
    for k in range(nt):
        m[k + 1] = m[k] - grid.dt * divergence(w[k], grid)
    return m, w


def run(problem: ProblemSpec, grid: GridSpec, opts: SolverOptions = None) -> Solution:
    """Full solve: iterate the splitting to the requested feasibility and gap,
    then project the transport pair to exact feasibility and extract prices."""
    from . import duality  # deferred: duality imports nothing from solver

    opts = opts or SolverOptions()
    rep = validate(problem, grid)
    if not rep.ok:
        raise ValueError("problem validation failed: " + "; ".join(rep.hard_failures))

    m0 = problem.sample_m0(grid)
    g_vals = problem.sample_g(grid)
    V = problem.sample_V(grid)
    Vmid = V[None]  # potential is time-independent
    state = SolverState.zeros(grid, m0)
    tau = 1.0 / opts.r_admm
    mbar = problem.coupling.mbar
    t_start = _time.time()
    converged = False
    feas = np.inf
    it = 0
    for it in range(1, opts.max_iters + 1):
        state.phi = elliptic_step(state, problem, grid, opts, g_vals=g_vals, m0=m0)
        Ka, Kb = _K_apply(state.phi, grid)
        za = Ka - state.mu_m * tau
        zb = Kb - state.mu_w * tau
        state.q_a, state.q_b, _ = prox_grid(za, zb, tau, problem.coupling,
                                            problem.H, Vmid)
        state.q_T = prox_terminal(state.phi[grid.nt] + state.mu_T * tau,
                                  g_vals, tau, mbar)
        multiplier_update(state, opts)
        if it % opts.check_every == 0 or it == opts.max_iters:
            prim = np.sqrt((np.sum((Ka - state.q_a) ** 2)
                            + np.sum((Kb - state.q_b) ** 2)) * grid.dt
                           * grid.cell_volume
                           + np.sum((state.phi[grid.nt] - state.q_T) ** 2)
                           * grid.cell_volume)
            sol = _assemble(state, problem, grid, opts, m0, g_vals)
            report = duality.certify(sol, problem, grid, mask_tol=opts.mask_tol)
            feas = prim
            state.history.append({"iter": it, "primal": prim, "gap": report.gap,
                                  "relative_gap": report.relative_gap,
                                  "clamp": state.clamp_l1})
            if prim <= opts.tol_feas and report.relative_gap <= opts.tol_gap:
                converged = True
                break

    sol = _assemble(state, problem, grid, opts, m0, g_vals)
    report = duality.certify(sol, problem, grid, mask_tol=opts.mask_tol)
    sol.diagnostics.update({
        "gap": report.gap,
        "relative_gap": report.relative_gap,
        "A_value": report.A_value,
        "B_value": report.B_value,
        "complementarity": report.complementarity_interior,
        "complementarity_terminal": report.complementarity_terminal,
        "energy_residual": report.energy_residual,
        "feas": feas,
        "iterations": it,
        "converged": converged and report.relative_gap <= opts.tol_gap,
        "wall_time": _time.time() - t_start,
        "history": state.history,
    })
    return sol


def _assemble(state: SolverState, problem, grid, opts, m0, g_vals):
    m, w = _staggered_from_multiplier(state, m0, grid)
    cap = problem.coupling.mbar if problem.coupling.hard_cap else None
    m, w = project_feasible(m, w, m0, grid, cap=cap)
    # the terminal trace term pins the additive representative: u(T-) sits at g
    # wherever the terminal density is strictly interior, so no constant shift
    # is needed
    u = state.phi.copy()
    beta, beta_raw, beta_T = extract_price(u, m, problem, grid, mask_tol=opts.mask_tol)
    return Solution(grid=grid, u=u, m=m, w=w, beta=beta, beta_raw=beta_raw,
                    beta_T=beta_T)
