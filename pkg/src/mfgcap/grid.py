"""Staggered space-time discretization of [0, T] x torus.

Density-like scalars live at time nodes and cell centers, momenta at time
midpoints and cell faces.  The discrete gradient and divergence are exact
negative adjoints of each other, so the continuity constraint is affine and
conservation holds to round-off.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "ScalarField",
    "MomentumField",
    "gradient",
    "divergence",
    "time_diff",
    "continuity_residual",
    "interp_velocity",
    "save_field_bin",
    "load_field_bin",
    "save_field_csv",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid: nx cells per axis, nt time intervals."""

    d: int
    nx: int
    nt: int
    T: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if self.nx < 4:
            raise ValueError("nx must be >= 4")
        if self.nt < 2:
            raise ValueError("nt must be >= 2")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    def space_shape(self) -> tuple:
        return (self.nx,) * self.d

    def scalar_shape(self) -> tuple:
        return (self.nt + 1, *self.space_shape())

    def momentum_shape(self) -> tuple:
        return (self.nt, self.d, *self.space_shape())

    def cell_centers(self) -> np.ndarray:
        """Coordinates of cell centers along one axis."""
        return (np.arange(self.nx) + 0.5) * self.dx

    def time_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)


@dataclass
class ScalarField:
    """Cell-centered scalar on all time nodes (density, value, price, ...)."""

    grid: GridSpec
    values: np.ndarray
    role: str = "generic"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.scalar_shape():
            raise ValueError(
                f"scalar field shape {self.values.shape} does not match "
                f"grid {self.grid.scalar_shape()}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite entries in scalar field")
        if self.role == "density" and np.min(self.values) < 0:
            raise ValueError("density field must be nonnegative")


@dataclass
class MomentumField:
    """Face-centered momentum on time midpoints; axis a faces sit between
    cell i and i+1 along axis a (periodic)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.momentum_shape():
            raise ValueError(
                f"momentum field shape {self.values.shape} does not match "
                f"grid {self.grid.momentum_shape()}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite entries in momentum field")


def gradient(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Face differences of one cell-centered slice.

    Face i along axis a carries (u[i+1] - u[i]) / dx, periodic wrap.
    Returns array of shape (d, *space_shape).
    """
    u = np.asarray(u, dtype=np.float64)
    out = np.empty((grid.d, *grid.space_shape()))
    for a in range(grid.d):
        out[a] = (np.roll(u, -1, axis=a) - u) / grid.dx
    return out


def divergence(w: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Conservative divergence of one face slice, exact negative adjoint of
    gradient: <gradient(u), w> = -<u, divergence(w)> for all u, w."""
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(grid.space_shape())
    for a in range(grid.d):
        out += (w[a] - np.roll(w[a], 1, axis=a)) / grid.dx
    return out


def time_diff(m: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Forward time difference node values -> midpoint values."""
    return (m[1:] - m[:-1]) / grid.dt


def continuity_residual(m, w, m0, grid: GridSpec):
    """Residual of the discrete continuity equation and the initial condition.

    r[k] = (m[k+1] - m[k])/dt + div(w[k+1/2]); returns (r, ||r||_L2, ||m[0]-m0||_L2)
    with quadrature-weighted discrete L2 norms.
    """
    m = np.asarray(m, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    r = time_diff(m, grid)
    for k in range(grid.nt):
        r[k] += divergence(w[k], grid)
    weight = grid.cell_volume * grid.dt
    norm = float(np.sqrt(np.sum(r**2) * weight))
    init = float(np.sqrt(np.sum((m[0] - np.asarray(m0)) ** 2) * grid.cell_volume))
    return r, norm, init


class DegenerateVelocityError(RuntimeError):
    """Raised when the interpolated density falls below the positivity floor."""


def _interp_scalar_space(values: np.ndarray, x: np.ndarray, grid: GridSpec, offset: float) -> float:
    """Periodic multilinear interpolation of one spatial slice.

    `offset` is the coordinate of node index 0 (0.5*dx for centers, dx for
    right faces).
    """
    nx = grid.nx
    s = np.asarray(x) / grid.dx - offset / grid.dx
    i0 = np.floor(s).astype(int)
    frac = s - i0
    if grid.d == 1:
        a = values[i0[0] % nx]
        b = values[(i0[0] + 1) % nx]
        return float(a * (1 - frac[0]) + b * frac[0])
    i, j = i0[0] % nx, i0[1] % nx
    ip, jp = (i0[0] + 1) % nx, (i0[1] + 1) % nx
    fx, fy = frac
    return float(
        values[i, j] * (1 - fx) * (1 - fy)
        + values[ip, j] * fx * (1 - fy)
        + values[i, jp] * (1 - fx) * fy
        + values[ip, jp] * fx * fy
    )


def interp_velocity(m, w, t: float, x, grid: GridSpec, floor: float = 1e-12) -> np.ndarray:
    """Velocity w/m at an arbitrary space-time point.

    Linear in time (nodes for m, midpoints for w, clamped at the ends),
    multilinear in space with periodic wrap.  Raises DegenerateVelocityError
    if the interpolated density is below `floor`.
    """
    m = np.asarray(m, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64)) % 1.0
    t = float(min(max(t, 0.0), grid.T))

    # density: linear between time nodes
    tau = t / grid.dt
    k0 = min(int(np.floor(tau)), grid.nt - 1)
    lam = tau - k0
    mk = [_interp_scalar_space(m[k0], x, grid, 0.5 * grid.dx),
          _interp_scalar_space(m[k0 + 1], x, grid, 0.5 * grid.dx)]
    m_val = mk[0] * (1 - lam) + mk[1] * lam
    if m_val < floor:
        raise DegenerateVelocityError(f"density {m_val:.3e} below floor at t={t}, x={x}")

    # momentum: linear between time midpoints, clamped
    tau_w = t / grid.dt - 0.5
    if tau_w <= 0:
        kw, lw = 0, 0.0
    elif tau_w >= grid.nt - 1:
        kw, lw = grid.nt - 2, 1.0
    else:
        kw = int(np.floor(tau_w))
        lw = tau_w - kw
    vel = np.empty(grid.d)
    for a in range(grid.d):
        off = np.full(grid.d, 0.5 * grid.dx)
        off[a] = grid.dx  # face nodes sit at (i+1)*dx along their own axis
        # multilinear interpolation needs a per-axis offset; shift coordinates
        xs = x.copy()
        for b in range(grid.d):
            xs[b] = x[b] - (off[b] - 0.5 * grid.dx)
        wa = [_interp_scalar_space(w[kw, a], xs, grid, 0.5 * grid.dx),
              _interp_scalar_space(w[kw + 1, a], xs, grid, 0.5 * grid.dx)]
        vel[a] = (wa[0] * (1 - lw) + wa[1] * lw) / m_val
    return vel


# --- serialization ----------------------------------------------------------

_MAGIC = b"MFGF"
_VERSION = 1
_KIND_CODES = {"density": 0, "value": 1, "price": 2, "generic": 3, "momentum": 4, "terminal": 5}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def save_field_bin(path, values: np.ndarray, grid: GridSpec, kind: str) -> None:
    """Little-endian binary dump: header (magic, version, d, nx, nt, T, kind)
    then the raw float64 payload in time-major index order."""
    header = struct.pack("<4sIIIIdB", _MAGIC, _VERSION, grid.d, grid.nx, grid.nt,
                         grid.T, _KIND_CODES[kind])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_field_bin(path):
    """Inverse of save_field_bin; returns (values, grid, kind)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    hsize = struct.calcsize("<4sIIIIdB")
    magic, version, d, nx, nt, T, kind_code = struct.unpack("<4sIIIIdB", raw[:hsize])
    if magic != _MAGIC:
        raise ValueError("not a field file (bad magic)")
    if version != _VERSION:
        raise ValueError(f"unsupported field file version {version}")
    grid = GridSpec(d=d, nx=nx, nt=nt, T=T)
    payload = np.frombuffer(raw[hsize:], dtype="<f8")
    kind = _KIND_NAMES[kind_code]
    if kind == "momentum":
        values = payload.reshape(grid.momentum_shape())
    elif kind == "terminal":
        values = payload.reshape(grid.space_shape())
    elif kind == "price":
        # interior price lives at time midpoints: nt slabs, not nt + 1
        values = payload.reshape((grid.nt,) + grid.space_shape())
    else:
        values = payload.reshape(grid.scalar_shape())
    return values.copy(), grid, kind


def save_field_csv(path, values: np.ndarray, grid: GridSpec, name: str = "value") -> None:
    """One row per cell: t, x[, y], value.  Header comments carry grid metadata."""
    values = np.asarray(values)
    xs = grid.cell_centers()
    ts = grid.time_nodes()
    terminal_only = values.shape == grid.space_shape()
    with open(path, "w") as fh:
        fh.write(f"# d={grid.d} nx={grid.nx} nt={grid.nt} T={grid.T}\n")
        cols = "t,x,value" if grid.d == 1 else "t,x,y,value"
        fh.write(cols.replace("value", name) + "\n")
        if terminal_only:
            times, data = [grid.T], values[None]
        elif values.shape[0] == grid.nt:
            # field stored at time midpoints (e.g. the interior price)
            times, data = 0.5 * (ts[1:] + ts[:-1]), values
        else:
            times, data = ts, values
        for k, t in enumerate(times):
            if grid.d == 1:
                for i in range(grid.nx):
                    fh.write(f"{t},{xs[i]},{data[k, i]}\n")
            else:
                for i in range(grid.nx):
                    for j in range(grid.nx):
                        fh.write(f"{t},{xs[i]},{xs[j]},{data[k, i, j]}\n")
