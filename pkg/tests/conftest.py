"""Shared fixtures: converged solves of the named problems are expensive, so
they are computed once per session and shared across test modules."""

import numpy as np
import pytest

from mfgcap import solver
from mfgcap.grid import GridSpec
from mfgcap.model import (CouplingSpec, FourierSeries, HamiltonianSpec,
                          ProblemSpec, constant_series)
from mfgcap.problems import TP2_EPS, named_grid, named_problem, named_solver_options


@pytest.fixture(scope="session")
def tp1_problem():
    return named_problem("TP1")


@pytest.fixture(scope="session")
def tp3_problem():
    return named_problem("TP3")


@pytest.fixture(scope="session")
def tp4_problem():
    return named_problem("TP4")


@pytest.fixture(scope="session")
def grid64():
    return named_grid("TP1")


@pytest.fixture(scope="session")
def tp1_solution(tp1_problem, grid64):
    return solver.run(tp1_problem, grid64, named_solver_options("TP1"))


@pytest.fixture(scope="session")
def tp3_solution(tp3_problem, grid64):
    return solver.run(tp3_problem, grid64, named_solver_options("TP3"))


@pytest.fixture(scope="session")
def tp4_solution(tp4_problem, grid64):
    return solver.run(tp4_problem, grid64, named_solver_options("TP4"))


@pytest.fixture(scope="session")
def tp1_refined(tp1_problem, tp1_solution):
    """TP1 solved across a spatial refinement ladder at fixed nt."""
    out = {64: tp1_solution}
    for nx in (32, 128):
        out[nx] = solver.run(tp1_problem, GridSpec(d=1, nx=nx, nt=64, T=1.0),
                             named_solver_options("TP1"))
    return out


@pytest.fixture(scope="session")
def tp2_sweep(grid64):
    """Penalized family solutions, keyed by the penalty width."""
    out = {}
    for eps in TP2_EPS:
        prob = named_problem("TP2", eps=eps)
        out[eps] = solver.run(prob, grid64, named_solver_options("TP2"))
    return out


# --- small, fast problems for unit tests -------------------------------------

@pytest.fixture()
def small_grid():
    return GridSpec(d=1, nx=16, nt=8, T=1.0)


@pytest.fixture()
def stationary_problem():
    """Zero terminal cost, zero coupling, huge cap: staying put is optimal."""
    return ProblemSpec(T=1.0, d=1, H=HamiltonianSpec(s=2.0),
                       coupling=CouplingSpec(kind="zero", mbar=1e6),
                       m0=FourierSeries.from_config(1, [{"k": 0, "re": 1.0},
                                                        {"k": 1, "re": 0.5}]),
                       g=constant_series(1, 0.0))


@pytest.fixture()
def stationary_solution(stationary_problem, small_grid):
    return solver.run(stationary_problem, small_grid,
                      solver.SolverOptions(r_admm=2.0, max_iters=2000))
