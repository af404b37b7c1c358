import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from taylorhel.grid import ComplexError, Field, GridSpec, build_complex, d, pair_11, pair_12, pair_22


def random_mask_complex(mask):
    mask = np.pad(mask, 1)  # builders require an empty one-cell rim
    spec = GridSpec(*mask.shape, h=0.5)
    return build_complex(mask, spec, require_connected=False)


masks = arrays(np.bool_, (5, 4, 6), elements=st.booleans()).filter(lambda m: m.any())


@settings(max_examples=40, deadline=None)
@given(masks)
def test_d_squared_is_bitwise_zero(mask):
    c = random_mask_complex(mask)
    assert (c.d1 @ c.d0).count_nonzero() == 0
    assert (c.d2 @ c.d1).count_nonzero() == 0


@settings(max_examples=40, deadline=None)
@given(masks)
def test_euler_characteristic_matches_dense_ranks(mask):
    # oracle: Betti numbers from dense ranks of the incidence matrices
    c = random_mask_complex(mask)
    V, E, F, C = c.counts
    r0 = np.linalg.matrix_rank(c.d0.toarray()) if E else 0
    r1 = np.linalg.matrix_rank(c.d1.toarray()) if F else 0
    r2 = np.linalg.matrix_rank(c.d2.toarray()) if C else 0
    b0, b1, b2, b3 = V - r0, E - r0 - r1, F - r1 - r2, C - r2
    assert b3 == 0
    assert V - E + F - C == b0 - b1 + b2


def test_box_counts_frozen():
    m = np.zeros((4, 4, 4), dtype=bool)
    m[1:3, 1:3, 1:3] = True
    c = build_complex(m, GridSpec.cube(4))
    # 2x2x2 cube of cells: 27 vertices, 54 edges, 36 faces, 8 cells
    assert c.counts == (27, 54, 36, 8)
    assert int(c.boundary_faces.sum()) == 24


def test_mass_fractions_sum_to_volume():
    m = np.zeros((6, 5, 4), dtype=bool)
    m[1:5, 1:4, 1:3] = True
    m[2, 2, 1] = False
    c = build_complex(m, GridSpec(6, 5, 4, 1.0))
    ncell = int(m.sum())
    assert np.isclose(c.mass0.sum(), ncell)
    assert np.isclose(c.mass1.sum(), 3 * ncell)
    assert np.isclose(c.mass2.sum(), 3 * ncell)
    assert np.all((c.mass1 > 0) & (c.mass1 <= 1))


def test_pairings_symmetric_and_positive(torus16, rng):
    c = torus16[0]
    a, b = (Field(1, rng.standard_normal(c.size(1)), c) for _ in range(2))
    v, w = (Field(2, rng.standard_normal(c.size(2)), c) for _ in range(2))
    assert np.isclose(pair_11(c, a, b), pair_11(c, b, a))
    assert np.isclose(pair_22(c, v, w), pair_22(c, w, v))
    assert pair_22(c, v, v) > 0 and pair_11(c, a, a) > 0


def test_pair_12_constant_fields_integrate_volume():
    m = np.zeros((6, 6, 6), dtype=bool)
    m[1:5, 1:5, 1:5] = True
    h = 1.0 / 6
    c = build_complex(m, GridSpec.cube(6))
    ax, _ = c.edge_positions()
    fax, _ = c.face_positions()
    A = Field(1, h * (ax == 0), c)  # A = e_x
    B = Field(2, h * h * (fax == 0), c)  # B = e_x
    assert np.isclose(pair_12(c, A, B), 64 * h**3)


def test_interior_edge_helicity_form_is_symmetric(torus16, rng):
    c = torus16[0]
    P = c.interior_edges.astype(float)
    a, b = P * rng.standard_normal(c.size(1)), P * rng.standard_normal(c.size(1))
    S = c.avg8 @ c.d1
    assert np.isclose(a @ (S @ b), b @ (S @ a), rtol=1e-12)


def test_field_errors(torus16):
    c = torus16[0]
    with pytest.raises(ComplexError):
        Field(1, np.zeros(3), c)
    with pytest.raises(ComplexError):
        Field(4, np.zeros(1), c)
    with pytest.raises(ComplexError):
        d(c, Field(3, np.zeros(c.size(3)), c))
    with pytest.raises(ComplexError):
        GridSpec(1, 4, 4)
    with pytest.raises(ComplexError):
        GridSpec(4, 4, 4, h=0.0)


def test_disconnected_mask_rejected():
    m = np.zeros((6, 4, 4), dtype=bool)
    m[1, 1, 1] = m[4, 2, 2] = True
    with pytest.raises(ComplexError):
        build_complex(m, GridSpec(6, 4, 4))
