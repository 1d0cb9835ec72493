from __future__ import annotations

import numpy as np
import pytest

from symvortex import lattice as lat
from symvortex import solver
from symvortex.core import VortexState
from symvortex.target import make_model

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def abelian_model():
    return make_model([[1]], [4 * np.pi])


@pytest.fixture(scope="session")
def solved32(abelian_model):
    geom = lat.make_torus(32, 32)
    state, rec = solver.solve_vortex(geom, abelian_model, [1], {"kind": "random", "seed": 0})
    assert rec.converged
    return state, rec


@pytest.fixture(scope="session")
def solved64(abelian_model):
    geom = lat.make_torus(64, 64)
    state, rec = solver.solve_vortex(geom, abelian_model, [1], {"kind": "random", "seed": 0})
    return state, rec


def random_state(geom, model, d, seed, profile="random_plus_flux"):
    rng = np.random.default_rng(seed)
    A = lat.make_connection_with_flux(geom, d, profile, seed=seed, amplitude=0.5)
    z = rng.normal(size=(*geom.shape, model.N)) + 1j * rng.normal(size=(*geom.shape, model.N))
    return VortexState(geom, 2.0 * z, A, 1.0)
