import numpy as np
import pytest

from taylorhel.grid import ComplexError, Field, pair_11
from taylorhel.harmonic import circulation
from taylorhel.potential import (
    boundary_circulation,
    boundary_circulation_prime,
    build_exterior,
    gauge_shift,
    harmonic_potential,
    potential_bundle,
    vector_potential,
)
from taylorhel.verify import random_tangential_field


def test_potential_reproduces_field(handled16, rng):
    c, _, basis = handled16
    B, _ = random_tangential_field(basis, rng)
    A = vector_potential(B, basis)
    assert np.max(np.abs(c.d1 @ A.values - B.values)) <= 1e-9 * np.max(np.abs(B.values))


def test_gauge_removes_period_components(handled16, rng):
    c, _, basis = handled16
    B, _ = random_tangential_field(basis, rng)
    A = vector_potential(B, basis)
    for r in basis.rho:
        assert abs(pair_11(c, A, r)) <= 1e-10 * np.sqrt(pair_11(c, A, A) * pair_11(c, r, r))


def test_bundle_parts_add_up(torus16, rng):
    c, _, basis = torus16
    B, _ = random_tangential_field(basis, rng)
    bundle = potential_bundle(B, basis)
    assert np.allclose(bundle.A.values, bundle.A_sigma.values + bundle.A_harm.values)


def test_harmonic_potential_is_linear(shell16):
    c, _, basis = shell16
    h1, h2 = basis.h_fields
    combo = harmonic_potential(h1 * 2.0 + h2 * -0.5, basis)
    parts = harmonic_potential(h1, basis) * 2.0 + harmonic_potential(h2, basis) * -0.5
    assert np.allclose(combo.values, parts.values, atol=1e-14)
    with pytest.raises(ComplexError):
        harmonic_potential(Field(2, c.d1 @ (c.interior_edges * 1.0), c) + h1, basis)


def test_gauge_shift_keeps_curl_and_moves_periods(handled16, rng):
    c, atlas, basis = handled16
    A = Field(1, rng.standard_normal(c.size(1)), c)
    p = rng.standard_normal(basis.g)
    A2 = gauge_shift(A, Field(0, rng.standard_normal(c.size(0)), c), p, basis)
    assert np.allclose(c.d1 @ A2.values, c.d1 @ A.values, atol=1e-12)
    moved = [circulation(A2, g) - circulation(A, g) for g in atlas.gamma]
    assert np.allclose(moved, p, atol=1e-12)
    with pytest.raises(ComplexError):
        gauge_shift(A, None, np.zeros(basis.g + 1), basis)


def test_exterior_and_boundary_pairings(handled16, rng):
    c, atlas, basis = handled16
    ext = build_exterior(c, atlas)
    assert np.array_equal(ext.period_matrix, np.eye(atlas.g))
    B, _ = random_tangential_field(basis, rng)
    A = vector_potential(B, basis)
    for i in range(atlas.g):
        direct, pairing = boundary_circulation(A, i, ext, atlas)
        assert pairing == pytest.approx(direct, rel=1e-8, abs=1e-9)
        direct, pairing = boundary_circulation_prime(A, i, basis, atlas)
        assert pairing == pytest.approx(direct, rel=1e-8, abs=1e-9)
    with pytest.raises(ComplexError):
        boundary_circulation(A, atlas.g, ext, atlas)
