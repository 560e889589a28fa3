import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptikh.gkb import BreakdownSignal, gkb_init, gkb_step, run_gkb
from adaptikh.problems import MatrixOperator, make_blur_problem

from conftest import random_matrix


def test_first_step_by_hand():
    A = np.array([[2.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    b = np.array([1.0, 1.0, 0.0])
    f = gkb_step(gkb_init(MatrixOperator(A), b))
    u1 = b / np.sqrt(2)
    v = A.T @ u1
    assert f.rho[0] == pytest.approx(np.linalg.norm(v))
    np.testing.assert_allclose(f.V[:, 0], v / np.linalg.norm(v))
    assert f.bnorm == pytest.approx(np.sqrt(2))


@settings(max_examples=25, deadline=None)
@given(m=st.integers(2, 25), n=st.integers(2, 25), seed=st.integers(0, 2**32 - 1))
def test_recurrences_and_orthogonality(m, n, seed):
    rng = np.random.default_rng(seed)
    A = random_matrix(rng, m, n)
    f = run_gkb(MatrixOperator(A), rng.standard_normal(m), min(m, n))
    r = f.residuals()
    scale = np.linalg.norm(A, 2)
    assert r["AV"] <= 1e-12 * scale * np.sqrt(f.k)
    assert r["ATU"] <= 1e-12 * scale * np.sqrt(f.k)
    assert r["ortho_U"] <= 1e-12 and r["ortho_V"] <= 1e-12
    assert np.all(f.rho > 0) and np.all(f.sigma >= 0)


def test_bidiagonal_matrices(rng):
    A = random_matrix(rng, 12, 9)
    f = run_gkb(MatrixOperator(A), rng.standard_normal(12), 5)
    B, Bbar = f.get_B(), f.get_Bbar()
    assert B.shape == (5, 5) and Bbar.shape == (6, 5)
    np.testing.assert_array_equal(Bbar[:5], B)
    np.testing.assert_allclose(f.U.T @ A @ f.V, Bbar, atol=1e-13)
    np.testing.assert_allclose(f.get_B(3), B[:3, :3])
    with pytest.raises(ValueError):
        f.get_B(6)


def test_identity_breaks_down_at_one():
    op = MatrixOperator(np.eye(6))
    f = gkb_init(op, np.arange(1.0, 7.0))
    with pytest.raises(BreakdownSignal) as info:
        f.step()
    sig = info.value
    assert sig.index == 1 and sig.which == "sigma"
    assert sig.factorization is f and f.k == 1 and f.exhausted
    assert f.rho[0] == pytest.approx(1.0)
    with pytest.raises(RuntimeError):
        f.step()


def test_rho_breakdown_keeps_k():
    # b has components along two singular directions of a tall matrix
    A = np.zeros((4, 3))
    A[0, 0], A[1, 1], A[2, 2] = 3.0, 1.0, 2.0
    b = np.array([1.0, 1.0, 0.0, 1.0])
    f = gkb_init(MatrixOperator(A), b)
    steps = 0
    with pytest.raises(BreakdownSignal) as info:
        for _ in range(3):
            f.step()
            steps += 1
    assert info.value.which == "rho"
    assert f.k == steps == 2


def test_cannot_exceed_min_dimension(rng):
    f = run_gkb(MatrixOperator(random_matrix(rng, 6, 3)), rng.standard_normal(6), 10)
    assert f.k == 3 and f.exhausted
    with pytest.raises(ValueError):
        f.step()


def test_zero_rhs_rejected():
    with pytest.raises(ValueError):
        gkb_init(MatrixOperator(np.eye(2)), np.zeros(2))


def test_without_reorthogonalization_short_run_is_accurate(rng):
    A = random_matrix(rng, 30, 20, smin=0.5)
    f = run_gkb(MatrixOperator(A), rng.standard_normal(30), 5, reorth=False)
    r = f.residuals()
    assert r["AV"] <= 1e-12 and r["ortho_V"] <= 1e-10


def test_blur_invariants_after_many_steps():
    p = make_blur_problem(32, 2.0, 6)
    f = run_gkb(p.operator, p.b_exact, 40)
    r = f.residuals()
    assert max(r["AV"], r["ATU"]) <= 1e-12 * np.sqrt(40)
    assert max(r["ortho_U"], r["ortho_V"]) <= 1e-12
