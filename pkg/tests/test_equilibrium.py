import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from twomatrix.equilibrium.grid import IMAG, REAL, DiscreteMeasure, Grid
from twomatrix.equilibrium.logkernel import (cross_axis_log_integral, log_kernel_matrix,
                                             mutual_energy, potential_at,
                                             same_axis_log_integral)
from twomatrix.equilibrium.projection import InfeasibleConstraintError, project_capped_simplex
from twomatrix.equilibrium.solver import (EquilibriumProblem, MeasureBlock, SolverOptions,
                                          check_positive_definite, minimize)
from twomatrix.two_matrix import INTERACTION, solve_one_matrix


# ---- grids ------------------------------------------------------------------------

def test_graded_grid_is_symmetric_and_reaches_radius():
    g = Grid.graded(3.0, 101, 1e6, 1.05)
    assert g.is_symmetric()
    assert g.edges[-1] == 1e6
    w = g.widths
    assert np.allclose(w[(g.nodes > -3) & (g.nodes < 3)], 6.0 / 101)


def test_refined_grid_has_centred_fine_block():
    g = Grid.refined(0.5, 101, 4.0, 201, 1e5)
    assert g.is_symmetric()
    c = g.n_cells // 2
    assert g.lo[c] == pytest.approx(-g.hi[c])
    w = g.widths
    assert w[c] == pytest.approx(1.0 / 101)
    ratio = w[1:] / w[:-1]
    assert ratio.max() < 1.051 and ratio.min() > 1 / 1.051


def test_measure_rejects_negative_and_excess():
    g = Grid.uniform(1.0, 4)
    with pytest.raises(ValueError):
        DiscreteMeasure(g, np.array([0.1, -0.1, 0.5, 0.5]))
    with pytest.raises(ValueError):
        DiscreteMeasure(g, np.full(4, 0.25), caps=np.full(4, 0.2))


# ---- capped simplex projection ----------------------------------------------------

@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=30), st.floats(0.05, 1.0),
       st.integers(0, 2**31 - 1))
def test_projection_feasible_and_optimal(vals, cap, seed):
    y = np.array(vals)
    caps = np.full(y.size, cap)
    mass = 0.5 * cap * y.size
    w = project_capped_simplex(y, caps, mass)
    assert np.all(w >= 0.0) and np.all(w <= caps + 1e-15)
    assert abs(w.sum() - mass) <= 1e-10
    # optimality versus random feasible points
    rng = np.random.default_rng(seed)
    for _ in range(5):
        z = project_capped_simplex(w + 0.1 * rng.standard_normal(y.size), caps, mass)
        assert np.sum((w - y) ** 2) <= np.sum((z - y) ** 2) + 1e-10


def test_projection_infeasible():
    with pytest.raises(InfeasibleConstraintError):
        project_capped_simplex(np.zeros(3), np.full(3, 0.1), 1.0)


# ---- logarithmic kernel -------------------------------------------------------------

def test_same_axis_integral_matches_quadrature():
    a, b, c, d = 0.0, 0.3, 0.4, 0.9
    ref = integrate.dblquad(lambda v, u: np.log(abs(u - v)), a, b, c, d,
                            epsabs=1e-13, epsrel=1e-12)[0]
    assert same_axis_log_integral(a, b, c, d) == pytest.approx(ref, rel=1e-9)
    # coincident cells: int_0^1 int_0^1 log|u - v| = -3/2
    assert same_axis_log_integral(0.0, 1.0, 0.0, 1.0) == pytest.approx(-1.5, abs=1e-14)


def test_cross_axis_integral_matches_quadrature():
    a, b, c, d = -0.2, 0.4, 0.1, 0.7
    ref = integrate.dblquad(lambda y, x: 0.5 * np.log(x * x + y * y), a, b, c, d,
                            epsabs=1e-13, epsrel=1e-12)[0]
    assert cross_axis_log_integral(a, b, c, d) == pytest.approx(ref, rel=1e-8)


def test_kernel_matrix_symmetric_near_and_far():
    g = Grid.graded(1.0, 21, 50.0, 1.3)
    K = log_kernel_matrix(g, g)
    assert np.allclose(K, K.T, atol=1e-13)
    # far pair: close to log(1/distance)
    i, j = 0, g.n_cells - 1
    assert K[i, j] == pytest.approx(-np.log(g.nodes[j] - g.nodes[i]), rel=1e-2)


def test_potential_of_cells_matches_kernel_means():
    g = Grid.uniform(1.0, 8)
    m = np.linspace(0.05, 0.2, 8)
    m /= m.sum()
    t, w = np.polynomial.legendre.leggauss(20)
    K = log_kernel_matrix(g, g)
    # average of the pointwise potential over cell 3 equals (K @ m)[3]
    pts = g.nodes[3] + 0.5 * g.widths[3] * t
    avg = 0.5 * w @ potential_at(g, m, pts)
    assert avg == pytest.approx((K @ m)[3], rel=1e-6)
    gi = Grid.uniform(1.0, 6, IMAG)
    Kc = log_kernel_matrix(g, gi)
    pts = gi.nodes[2] + 0.5 * gi.widths[2] * t
    avg = 0.5 * w @ potential_at(g, m, pts, axis=IMAG)
    assert avg == pytest.approx((m @ Kc)[2], rel=1e-8)


def test_discrete_energy_positive_for_zero_mass_difference():
    g = Grid.uniform(2.0, 40)
    K = log_kernel_matrix(g, g)
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.standard_normal(40)
        v -= v.mean()
        assert v @ K @ v > 0.0


# ---- solver ---------------------------------------------------------------------------

def test_interaction_matrix_positive_definite():
    ok, eig = check_positive_definite(INTERACTION)
    assert ok and np.min(eig) > 0.29


def test_one_matrix_semicircle():
    sol = solve_one_matrix([0.0, 0.0, 1.0], 2001)
    mu = sol.measures[0]
    exact = np.sqrt(np.clip(2.0 - mu.grid.nodes**2, 0.0, None)) / np.pi
    assert np.max(np.abs(mu.density - exact)) <= 5e-3
    assert mu.total_mass == pytest.approx(1.0, abs=1e-12)
    assert sol.el_residual <= 1e-8


def test_one_matrix_quartic_support():
    # V = x^4 / 4: support [-b, b] with b^4 = 16/3 for the field V (normalisation 2U + V)
    sol = solve_one_matrix([0.0, 0.0, 0.0, 0.0, 0.25], 1001)
    mu = sol.measures[0]
    supp = mu.grid.nodes[mu.density > 1e-8 * mu.density.max()]
    assert supp.max() == pytest.approx((16.0 / 3.0) ** 0.25, abs=2 * mu.grid.widths[0])


def test_capped_single_measure_saturates():
    # a field pushing mass to 0 against a cap: the cap binds around the origin
    g = Grid.uniform(3.0, 151)
    caps = 0.004 * g.widths / g.widths.mean()
    block = MeasureBlock(g, 0.3, g.cell_average(lambda x: 4 * x**2), caps, "c")
    sol = minimize(EquilibriumProblem((block,), np.array([[1.0]])), SolverOptions())
    m = sol.measures[0].masses
    assert np.all(m <= caps + 1e-15)
    assert m.sum() == pytest.approx(0.3, abs=1e-10)
    assert np.isclose(m[g.n_cells // 2], caps[g.n_cells // 2])
    assert np.allclose(m, m[::-1], atol=1e-12)


def test_mutual_energy_of_uniform_measure():
    # I(uniform on [-1, 1]) = 3/2 - log 2
    g = Grid.uniform(1.0, 400)
    m = np.full(400, 1.0 / 400)
    assert mutual_energy(m, g, m, g) == pytest.approx(1.5 - np.log(2.0), abs=1e-6)
