import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptikh.problems import (
    LinearOperator,
    MatrixOperator,
    SeparableBlurOperator,
    add_noise,
    adjoint_mismatch,
    blur_factor,
    geometric_image,
    make_blur_problem,
    make_gravity_problem,
    opnorm_estimate,
)


def test_matrix_operator_roundtrip(rng):
    A = rng.standard_normal((5, 3))
    op = MatrixOperator(A)
    x, y = rng.standard_normal(3), rng.standard_normal(5)
    np.testing.assert_allclose(op.apply(x), A @ x)
    np.testing.assert_allclose(op.apply_adjoint(y), A.T @ y)
    np.testing.assert_array_equal(op.to_dense(), A)
    assert op.shape == (5, 3)


def test_matrix_operator_is_read_only():
    op = MatrixOperator(np.eye(2))
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 5.0


def test_shape_checks():
    op = MatrixOperator(np.ones((2, 3)))
    with pytest.raises(ValueError):
        op.apply(np.ones(2))
    with pytest.raises(ValueError):
        op.apply_adjoint(np.ones(3))


def test_generic_operator_to_dense(rng):
    A = rng.standard_normal((4, 6))
    op = LinearOperator(4, 6, lambda x: A @ x, lambda y: A.T @ y)
    np.testing.assert_allclose(op.to_dense(), A)


@pytest.mark.parametrize("size", [8, 12, 16])
def test_blur_matches_dense_kron(size, rng):
    op = SeparableBlurOperator(blur_factor(size, 2.0, 3))
    A = op.to_dense()
    x = rng.standard_normal(size * size)
    y = rng.standard_normal(size * size)
    assert np.max(np.abs(op.apply(x) - A @ x)) <= 1e-12
    assert np.max(np.abs(op.apply_adjoint(y) - A.T @ y)) <= 1e-12
    assert np.max(np.abs(LinearOperator.to_dense(op) - A)) <= 1e-12


def test_blur_factor_structure():
    A1 = blur_factor(32, 4.0, 12)
    np.testing.assert_allclose(A1, A1.T)
    assert np.all(A1 >= 0)
    assert np.all(A1.sum(axis=1) <= 1.0 + 1e-15)
    i, j = np.nonzero(A1)
    assert np.max(np.abs(i - j)) == 12
    # the centre of the kernel normalised by the full discrete kernel
    offs = np.arange(-200, 201)
    Z = np.exp(-(offs**2) / 32.0).sum()
    assert A1[16, 16] == pytest.approx(1.0 / Z)


def test_band_zero_is_identity():
    p = make_blur_problem(8, 1.0, 0)
    np.testing.assert_array_equal(p.b_exact, p.x_exact)


def test_blur_preserves_nonnegativity_and_mass():
    p = make_blur_problem(32, 2.0, 8)
    assert np.all(p.b_exact >= 0)
    assert p.b_exact.sum() <= p.x_exact.sum() + 1e-12


def test_geometric_image_range():
    img = geometric_image(64)
    assert img.min() == 0.0 and img.max() == 1.0
    assert set(np.unique(img)) == {0.0, 0.6, 1.0}


@pytest.mark.parametrize(
    "kwargs",
    [dict(img_size=4), dict(psf_sigma=0.0), dict(band=-1), dict(img_size=8, band=9)],
)
def test_blur_validation(kwargs):
    with pytest.raises(ValueError):
        make_blur_problem(**kwargs)


def test_gravity_problem():
    p = make_gravity_problem(32, 0.25)
    A = p.operator.matrix
    np.testing.assert_allclose(A, A.T)
    np.testing.assert_allclose(p.b_exact, A @ p.x_exact)
    with pytest.raises(ValueError):
        make_gravity_problem(32, 0.0)


def test_add_noise_exact_level():
    p = add_noise(make_gravity_problem(40), 0.05, seed=3)
    assert np.linalg.norm(p.e) == pytest.approx(0.05 * np.linalg.norm(p.b_exact), rel=1e-13)
    assert p.epsilon == pytest.approx(1.01 * np.linalg.norm(p.e), rel=1e-15)
    np.testing.assert_array_equal(p.b_noisy, p.b_exact + p.e)
    q = add_noise(make_gravity_problem(40), 0.05, seed=3)
    np.testing.assert_array_equal(p.b_noisy, q.b_noisy)


def test_add_noise_zero_and_invalid():
    p = add_noise(make_gravity_problem(10), 0.0, seed=1)
    assert p.epsilon == 0.0
    with pytest.raises(ValueError):
        add_noise(p, -1.0, 0)
    with pytest.raises(ValueError):
        add_noise(p, 0.1, 0, safety=0.5)


def test_opnorm_estimate_is_lower_bound(rng):
    A = rng.standard_normal((20, 15))
    est = opnorm_estimate(MatrixOperator(A))
    smax = np.linalg.norm(A, 2)
    assert est <= smax * (1 + 1e-12)
    assert est >= 0.5 * smax


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 12), n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_adjoint_consistency(m, n, seed):
    rng = np.random.default_rng(seed)
    op = MatrixOperator(rng.standard_normal((m, n)))
    assert adjoint_mismatch(op, rng) <= 1e-12


def test_blur_adjoint_consistency(rng):
    op = make_blur_problem().operator
    assert adjoint_mismatch(op, rng) <= 1e-12
