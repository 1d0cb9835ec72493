from __future__ import annotations

import numpy as np
import pytest
from conftest import random_state
from hypothesis import given, settings
from hypothesis import strategies as st

from symvortex import core as C
from symvortex import lattice as lat
from symvortex.core import VortexState
from symvortex.errors import AmbiguousZero, GeometryMismatch, NotASolution, NotProper, ShapeMismatch
from symvortex.target import make_model

TAU = 4 * np.pi


def _zero_state(n, d):
    g = lat.make_torus(n, n)
    return VortexState(g, np.zeros((n, n, 1), complex), lat.make_connection_with_flux(g, [d]), 1.0)


def test_zero_section_residual(abelian_model):
    r1, r2 = C.residual(_zero_state(16, 1), abelian_model)
    assert np.all(r1 == 0)
    np.testing.assert_allclose(r2, 2 * np.pi - TAU, atol=1e-10)


def test_zero_section_flat_energy(abelian_model):
    eb = C.energy_identity(_zero_state(16, 0), abelian_model)
    assert eb.E == pytest.approx(0.5 * TAU**2)
    assert eb.pairing == 0 and eb.dbar2 == 0
    assert eb.resid2 == pytest.approx(0.5 * TAU**2)


def test_vacuum_has_zero_energy(abelian_model):
    g = lat.make_torus(8, 8)
    s = VortexState(g, np.full((8, 8, 1), np.sqrt(2 * TAU) + 0j), lat.zero_links(g), 1.0)
    assert C.energy(s, abelian_model) < 1e-20


def test_pairing_of_zero_section_is_flux_times_tau(abelian_model):
    for d in (1, 2, -1):
        p = C.topological_pairing(_zero_state(12, d), abelian_model)
        assert p == pytest.approx(C.pairing_closed_form(abelian_model, [d]), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0, 1, 2]), st.floats(0.2, 2.0))
def test_energy_identity_random_states(seed, d, eps):
    m = make_model([[1], [2]], [3.0])
    s = random_state(lat.make_torus(10, 8, 1.0, 1.5), m, [d], seed).replace(epsilon=eps)
    eb = C.energy_identity(s, m)
    assert eb.identity_gap <= 1e-10 * max(1.0, abs(eb.E))
    assert eb.E == pytest.approx(C.energy(s, m), rel=1e-14)


def test_gauge_invariance_of_diagnostics(abelian_model):
    s = random_state(lat.make_torus(12, 12), abelian_model, [1], 3)
    g = np.random.default_rng(9).uniform(-np.pi, np.pi, size=(12, 12, 1))
    z2, A2 = lat.gauge_transform(s.geom, g, s.z, s.A, abelian_model.W)
    s2 = s.replace(z=z2, A=A2)
    a, b = C.energy_identity(s, abelian_model), C.energy_identity(s2, abelian_model)
    for key in ("E", "dbar2", "resid2", "pairing"):
        assert getattr(b, key) == pytest.approx(getattr(a, key), rel=1e-12)
    np.testing.assert_allclose(C.residual_norms(s2, abelian_model), C.residual_norms(s, abelian_model), rtol=1e-12)


def test_threshold_and_lower_bound(abelian_model):
    low = abelian_model.with_tau([np.pi])
    assert C.below_threshold(low, [1], 1.0)
    assert not C.below_threshold(abelian_model, [1], 1.0)
    # Cauchy-Schwarz floor eps^2 (2 pi d - tau Vol)^2 / (2 Vol)
    assert C.lower_bound_residual(low, [1], 1.0) == pytest.approx(0.5 * np.pi**2)
    assert C.lower_bound_residual(abelian_model, [1], 1.0) == 0.0


def test_lower_bound_is_respected(abelian_model):
    low = abelian_model.with_tau([np.pi])
    floor = C.lower_bound_residual(low, [1], 1.0)
    for seed in range(5):
        eb = C.energy_identity(random_state(lat.make_torus(12, 12), low, [1], seed), low)
        assert eb.resid2 >= floor * (1 - 1e-12)


def test_sup_bound_contract(abelian_model, solved32):
    with pytest.raises(NotASolution):
        C.sup_bound_check(_zero_state(16, 1), abelian_model)
    g = lat.make_torus(8, 8)
    pair = VortexState(g, np.zeros((8, 8, 2), complex), lat.zero_links(g), 1.0)
    with pytest.raises(NotProper):
        C.sup_bound_check(pair, make_model([[1], [-1]], [1.0]))
    rep = C.sup_bound_check(solved32[0], abelian_model)
    assert rep["satisfied"] and rep["bound"] == pytest.approx(2 * TAU)


def test_zero_count_simple_zero(abelian_model):
    g = lat.make_torus(16, 16)
    s = np.arange(16) * g.hs - 0.5 + 0.5 * g.hs
    w = s[:, None] + 1j * s[None, :]
    state = VortexState(g, w[..., None], lat.zero_links(g), 1.0)
    assert C.zero_count(state, abelian_model, theta_zero=0.2) == 1


def test_zero_count_nonvanishing(abelian_model):
    g = lat.make_torus(8, 8)
    state = VortexState(g, np.full((8, 8, 1), 2.0 + 1j), lat.zero_links(g), 1.0)
    assert C.zero_count(state, abelian_model) == 0


def test_zero_count_exact_zero_is_ambiguous(abelian_model):
    g = lat.make_torus(8, 8)
    z = np.ones((8, 8, 1), complex)
    z[3, 3] = 0
    with pytest.raises(AmbiguousZero):
        C.zero_count(VortexState(g, z, lat.zero_links(g), 1.0), abelian_model)


def test_solution_vortex_location(abelian_model, solved32):
    state, _ = solved32
    assert C.zero_count(state, abelian_model) == 1
    locs = C.zero_locations(state, abelian_model)
    assert len(locs) == 1 and locs[0][2] == 1


def test_state_validation(abelian_model):
    g = lat.make_torus(8, 8)
    with pytest.raises(GeometryMismatch):
        VortexState(g, np.zeros((7, 8, 1), complex), lat.zero_links(g), 1.0)
    with pytest.raises(ValueError):
        VortexState(g, np.zeros((8, 8, 1), complex), lat.zero_links(g), 0.0)
    with pytest.raises(ShapeMismatch):
        C.energy(VortexState(g, np.zeros((8, 8, 2), complex), lat.zero_links(g), 1.0), abelian_model)


def test_vector_round_trip(abelian_model):
    s = random_state(lat.make_torus(6, 7), abelian_model, [1], 0)
    t = s.from_vector(s.to_vector())
    assert np.array_equal(t.z, s.z) and np.array_equal(t.A.a_t, s.A.a_t)
