import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.interpolate import BSpline

from lshawkes.model import builtin_family, preset
from lshawkes.splines import SplineBasis, gauss_legendre_pieces, project_truth


def _scipy_basis(A, order, n_basis):
    breaks = np.linspace(0, A, n_basis - order + 2)
    knots = np.r_[np.zeros(order - 1), breaks, np.full(order - 1, A)]
    return knots, order - 1


def test_order_one_value():
    b = SplineBasis(A=1.0, order=1, n_basis=2)
    assert b.eval_scalar(0, 0.25) == pytest.approx(np.sqrt(2))
    assert b.eval_scalar(1, 0.25) == 0.0
    assert b.eval_scalar(0, -0.01) == 0.0 and b.eval_scalar(1, 1.01) == 0.0


@pytest.mark.parametrize("order,n_basis,A", [(1, 4, 1.0), (2, 5, 2.0), (3, 6, 0.7), (4, 8, 3.0)])
def test_matches_scipy(order, n_basis, A):
    knots, k = _scipy_basis(A, order, n_basis)
    u = np.linspace(0, A, 397)[:-1]
    ref = BSpline.design_matrix(u, knots, k).toarray()
    ours = SplineBasis(A, order, n_basis)._dense(u, normalized=False)
    assert np.allclose(ours, ref, atol=1e-13)


@pytest.mark.parametrize("order,n_basis", [(1, 3), (2, 4), (4, 8)])
def test_gram_against_quad(order, n_basis):
    A = 2.0
    b = SplineBasis(A, order, n_basis)
    G = b.scalar_gram()
    assert np.allclose(np.diag(G), 1.0, atol=1e-12)
    brk = list(b.breaks)
    for i, j in [(0, 0), (0, 1), (n_basis - 2, n_basis - 1)]:
        val = quad(lambda u: b.eval_scalar(i, u) * b.eval_scalar(j, u), 0, A, points=brk,
                   limit=200)[0]
        assert G[i, j] == pytest.approx(val, abs=1e-10)


def test_vector_layout_and_gram():
    b = SplineBasis(1.0, 2, 4, d=3)
    assert b.J == 12
    assert np.allclose(b.gram(), np.kron(np.eye(3), b.scalar_gram()))
    coef = np.zeros(12)
    coef[1 * 4 + 2] = 1.0  # component 1, scalar basis 2
    vals = b.evaluate(coef, [0.3, 0.6])
    assert np.all(vals[:, [0, 2]] == 0)
    assert np.allclose(vals[:, 1], b.eval_scalar(2, np.array([0.3, 0.6])))


@given(st.integers(1, 4), st.integers(0, 6), st.floats(0.0, 1.0))
def test_partition_of_unity(order, extra, u):
    b = SplineBasis(1.0, order, order + extra)
    assert b._dense(np.array([u]), normalized=False).sum() == pytest.approx(1.0, abs=1e-12)


def test_rejects_small_basis():
    with pytest.raises(ValueError):
        SplineBasis(1.0, order=4, n_basis=3)


def test_gauss_legendre_pieces_exact():
    nodes, w = gauss_legendre_pieces([0.0, 0.3, 1.0], 3)
    assert w @ nodes**5 == pytest.approx(1 / 6, abs=1e-14)


def test_projection_exact_for_piecewise_kernel():
    m = preset("pc1")
    proj = project_truth(m, SplineBasis(1.0, 1, 2), 0.5, 0.2)
    assert proj.epsilon < 1e-12
    # theta = (nu, c_1, c_2) with psi_i = sqrt(2) * 1[piece i]
    assert proj.theta == pytest.approx([0.5, 0.6 / np.sqrt(2), 0.4 / np.sqrt(2)])


def test_projection_local_linear_baseline_exact():
    m = builtin_family("linear_baseline", {"nu": 0.5, "nu_slope": 0.8})
    proj = project_truth(m, SplineBasis(1.0, 4, 6), 0.4, 0.2, K_order=2)
    assert proj.epsilon < 1e-10
    # nu(x) = 0.5 + 0.8 x = (0.5 + 0.32) + 0.16 (x - 0.4)/0.2
    assert proj.theta[:2] == pytest.approx([0.82, 0.16])


def test_projection_error_shrinks_with_basis():
    m = preset("tvexp")
    eps = [project_truth(m, SplineBasis(3.0, 4, n), 0.5, 0.1).epsilon_mu for n in (6, 12, 24)]
    assert eps[0] > eps[1] > eps[2]


def test_projection_bad_window():
    with pytest.raises(ValueError):
        project_truth(preset("pc1"), SplineBasis(1.0, 1, 2), 0.1, 0.2)
