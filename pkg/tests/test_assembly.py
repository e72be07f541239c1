import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitsize.assembly import (
    BandedSymmetricMatrix,
    IncompatibleDataError,
    add_inclusion,
    apply_stiffness,
    assemble_cem,
    assemble_global,
    assemble_stiffness,
    count_inclusions,
    count_inclusions_up_to,
    element_stiffness,
    inclusion_update,
    neumann_load,
)
from eitsize.forward import cem_t1, neumann_t1
from eitsize.mesh import InclusionMask, build_mesh


def _dense_reference(mesh, coeff):
    """Plain dense assembly, one element matrix at a time."""
    A = np.zeros((mesh.n_params, mesh.n_params))
    for e in range(mesh.n_elements):
        p = mesh.element_params[e]
        A[np.ix_(p, p)] += coeff[e] * element_stiffness(mesh, e)
    return A


@pytest.mark.parametrize("dim", [2, 3])
def test_element_stiffness_properties(dim):
    m = build_mesh(dim, 4)
    for e in range(m.n_elements):
        K = element_stiffness(m, e)
        assert np.abs(K - K.T).max() <= 1e-14
        assert np.abs(K.sum(axis=1)).max() <= 1e-13
        assert np.linalg.eigvalsh(K).min() >= -1e-13


def test_interior_element_nullspace_is_constants():
    m = build_mesh(3, 5)
    K = element_stiffness(m, m.element_index((2, 2, 2)))
    ev = np.linalg.eigvalsh(K)
    assert ev[0] == pytest.approx(0, abs=1e-13)
    assert ev[1] > 1e-6


def test_band_matches_dense_assembly():
    m = build_mesh(3, 4)
    coeff = np.random.default_rng(0).uniform(0.5, 2.0, m.n_elements)
    band = assemble_stiffness(m, coeff)
    np.testing.assert_allclose(band.to_dense(), _dense_reference(m, coeff), atol=1e-14)
    assert band.m == 6**3 and band.b == m.half_bandwidth


def test_global_nullspace_is_constants():
    for dim in (2, 3):
        m = build_mesh(dim, 3)
        A = assemble_stiffness(m).to_dense()
        assert np.abs(A @ np.ones(m.n_params)).max() <= 1e-13
        assert np.linalg.matrix_rank(A, tol=1e-10) == m.n_params - 1


def test_order_and_bandwidth_20_cube():
    m = build_mesh(3, 20)
    band = BandedSymmetricMatrix.zeros(m.n_params, m.half_bandwidth)
    assert (band.m, band.b) == (10648, 1015)
    # every element coupling falls inside the band
    p = m.element_params
    assert (p.max(axis=1) - p.min(axis=1)).max() < band.b


@pytest.mark.parametrize("dim", [2, 3])
def test_incremental_equals_scratch(dim):
    m = build_mesh(dim, 5)
    base = assemble_stiffness(m)
    rng = np.random.default_rng(7)
    for _ in range(20):
        els = rng.choice(m.n_elements, size=rng.integers(1, 8), replace=False)
        k = float(rng.choice([0.1, 0.5, 3.0, 10.0]))
        inc = InclusionMask(m, els, k)
        upd = add_inclusion(base.copy(), inc)
        scratch = assemble_stiffness(m, inc.coefficient())
        assert np.abs(upd.ab - scratch.ab).max() <= 1e-13


def test_empty_inclusion_and_unit_contrast():
    m = build_mesh(2, 6)
    base = assemble_stiffness(m)
    empty = add_inclusion(base.copy(), InclusionMask(m, [], 10.0))
    assert np.array_equal(empty.ab, base.ab)
    unit = add_inclusion(base.copy(), InclusionMask(m, [7, 8, 14], 1.0))
    assert np.abs(unit.ab - base.ab).max() <= 1e-14


def test_inclusion_update_block():
    m = build_mesh(2, 6)
    inc = InclusionMask(m, [14, 15, 21], 4.0)
    support, C = inclusion_update(inc)
    full = assemble_stiffness(m, inc.coefficient()).to_dense() - assemble_stiffness(m).to_dense()
    np.testing.assert_allclose(full[np.ix_(support, support)], C, atol=1e-13)
    mask = np.ones(m.n_params, dtype=bool)
    mask[support] = False
    assert np.abs(full[mask]).max() <= 1e-13


@pytest.mark.parametrize("dim", [2, 3])
def test_matrix_free_product(dim):
    m = build_mesh(dim, 4)
    inc = InclusionMask(m, [3, 5], 7.0)
    K = add_inclusion(assemble_stiffness(m), inc)
    x = np.random.default_rng(2).normal(size=m.n_params)
    np.testing.assert_allclose(apply_stiffness(m, x, inc.coefficient()), K.matvec(x),
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(K.to_sparse() @ x, K.matvec(x), rtol=1e-12, atol=1e-12)


def test_neumann_load_compatibility():
    m = build_mesh(3, 4)
    p = neumann_load(m, neumann_t1(3).flux(m))
    assert abs(p.sum()) <= 1e-14
    # integral of phi * 1 over the x = l face equals the face area
    assert p[p > 0].sum() == pytest.approx(1.0, abs=1e-14)

    def leaky(axis, side, pts):
        return np.ones(len(pts))

    with pytest.raises(IncompatibleDataError):
        neumann_load(m, leaky)


def test_assemble_global_boundary_warning(caplog):
    m = build_mesh(2, 5)
    with caplog.at_level("WARNING"):
        assemble_global(m, InclusionMask(m, [0], 2.0), neumann_t1(2).flux(m))
    assert "d0 = 0" in caplog.text


def test_cem_blocks_unit_cube():
    m = build_mesh(3, 17)
    lay = cem_t1(m, 0.2)
    sys_ = assemble_cem(m, None, lay.face_sets(m), lay.impedances, lay.currents)
    np.testing.assert_allclose(sys_.K_UU, [1 / 0.2, 1 / 0.2], rtol=1e-13)
    np.testing.assert_allclose(sys_.K_wU.sum(axis=0), [1 / 0.2, 1 / 0.2], rtol=1e-12)


def test_cem_block_matrix_symmetric():
    m = build_mesh(2, 6)
    lay = cem_t1(m, 0.3)
    A = assemble_cem(m, InclusionMask(m, [14], 5.0), lay.face_sets(m), lay.impedances,
                     lay.currents).to_dense()
    assert np.abs(A - A.T).max() <= 1e-14
    ev = np.linalg.eigvalsh(A)
    assert ev[0] == pytest.approx(0, abs=1e-10) and ev[1] > 1e-8


def test_cem_errors():
    m = build_mesh(2, 6)
    faces = cem_t1(m).face_sets(m)
    with pytest.raises(ValueError):
        assemble_cem(m, None, [], [], [])
    with pytest.raises(ValueError):
        assemble_cem(m, None, faces, [0.2, 0.0], [1, -1])
    with pytest.raises(ValueError):
        assemble_cem(m, None, faces, [0.2, 0.2], [1, -0.5])
    with pytest.raises(ValueError):
        assemble_cem(m, None, [faces[0], faces[0]], [0.2, 0.2], [1, -1])


def test_count_inclusions():
    # 343*342*341*340*339 / 5! computed by hand
    assert count_inclusions(343, 5) == 4_610_555_139_960 // 120 == 38_421_292_833
    assert f"{count_inclusions(343, 5):.1e}" == "3.8e+10"
    assert count_inclusions(10, 0) == 1
    big = count_inclusions(8000, 480)
    assert isinstance(big, int)
    # Stirling-free check of the magnitude via lgamma
    lg = (math.lgamma(8001) - math.lgamma(481) - math.lgamma(7521)) / math.log(10)
    assert abs(math.log10(big) - lg) < 1e-9
    assert count_inclusions_up_to(5, 5) == 31
    with pytest.raises(ValueError):
        count_inclusions(3, 4)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 60), data=st.data())
def test_count_inclusions_pascal(n, data):
    k = data.draw(st.integers(1, n)) if n else 0
    if n and k:
        assert count_inclusions(n + 1, k) == count_inclusions(n, k) + count_inclusions(n, k - 1)
    assert count_inclusions(n, k) == count_inclusions(n, n - k)
