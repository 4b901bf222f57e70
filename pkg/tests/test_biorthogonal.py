import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from twomatrix import biorthogonal as bo
from twomatrix.potentials import PotentialSpec

SPEC = PotentialSpec.quadratic(0.0, 1.0)


@pytest.fixture(scope="module")
def fam6():
    return bo.biorthogonal_family(SPEC, 6, 10)


@pytest.fixture(scope="module")
def fam_alpha():
    return bo.biorthogonal_family(PotentialSpec.quadratic(-1.5, 0.7), 6, 8)


def test_moment_recurrence_matches_quadrature():
    with mp.workdps(40):
        for coeffs in (SPEC.w_coeffs, PotentialSpec.quadratic(2.0, 1.0).w_coeffs, (0.0, 0.0, 0.5)):
            a = bo.polynomial_moments(coeffs, 6, 16)
            for i in (2, 6, 10, 14):
                ref = bo._mp_moment(list(coeffs), 6, i)
                assert abs(a[i] / ref - 1) < mp.mpf(10) ** -30


def test_bimoment_sparsity_and_2d_oracle():
    bm = bo.bimoment_matrix(SPEC, 3, 4)
    M = bm.as_float()
    assert M[0, 1] == 0.0 and M[1, 2] == 0.0 and M[0, 0] > 0.0
    f = lambda y, x: x**2 * y**2 * np.exp(-3 * (x * x / 2 + y**4 / 4 - x * y))
    ref = integrate.dblquad(f, -8, 8, -6, 6, epsabs=0, epsrel=1e-12)[0]
    assert M[2, 2] == pytest.approx(ref, rel=1e-10)


def test_family_basics(fam6):
    assert [float(c) for c in fam6.p_coeffs[0]] == [1.0]
    assert [float(c) for c in fam6.q_coeffs[0]] == [1.0]
    assert fam6.h[0] == pytest.approx(fam6.bimoments.as_float()[0, 0], rel=1e-14)
    for c in fam6.p_coeffs + fam6.q_coeffs:
        assert c[-1] == 1
    assert bo.check_parity(fam6) < 1e-12
    assert "not a multiple of 3" not in " ".join(fam6.notes)


def test_biorthogonality_by_quadrature(fam6, fam_alpha):
    for fam in (fam6, fam_alpha):
        r = bo.biorthogonality_residual(fam)
        assert r["max_offdiag_scaled"] <= 1e-8
        assert r["max_diag_rel"] <= 1e-8


def test_zeros_real_simple_interlacing(fam6, fam_alpha):
    for fam in (fam6, fam_alpha):
        for which in ("p", "q"):
            rep = bo.zeros_report(fam, which)
            assert rep["real"] and rep["simple"] and rep["all_interlace"]


def test_mop_ranges():
    assert bo.mop_ranges(0) == {0: 0, 1: 0, 2: 0}
    assert bo.mop_ranges(1) == {0: 1, 1: 0, 2: 0}
    assert bo.mop_ranges(6)[0] == 2
    assert bo.mop_ranges(7) == {0: 3, 1: 2, 2: 2}


def test_mop_conditions(fam6, fam_alpha):
    assert bo.verify_mop_conditions(fam6, 0)["n_conditions"] == 0
    for fam in (fam6, fam_alpha):
        for j in range(fam.degree + 1):
            assert bo.verify_mop_conditions(fam, j)["max_scaled"] <= 1e-8


def test_weight_w_symmetry_and_decoupled_oracle():
    x = np.array([0.3, 1.1, 2.0])
    w0 = bo.weight_w(SPEC, 6, 0, x)
    assert np.allclose(bo.weight_w(SPEC, 6, 0, -x), w0, rtol=1e-12)
    assert np.allclose(bo.weight_w(SPEC, 6, 1, -x), -bo.weight_w(SPEC, 6, 1, x), rtol=1e-12)
    tiny = PotentialSpec.quadratic(0.0, 1e-8)
    n = 5
    ref = integrate.quad(lambda y: np.exp(-n * y**4 / 4), -np.inf, np.inf, epsabs=0,
                         epsrel=1e-13)[0]
    got = bo.weight_w(tiny, n, 0, x)
    assert np.allclose(got, np.exp(-n * x**2 / 2) * ref, rtol=1e-10)
    far = bo.weight_w(SPEC, 6, 0, np.linspace(3.0, 6.0, 7))
    assert np.all(np.diff(far) < 0.0)


def test_transformed_functions(fam6):
    x = np.linspace(-2.0, 2.0, 9)
    assert np.allclose(fam6.transformed_Q(0, x), bo.weight_w(SPEC, 6, 0, x), rtol=1e-10)
    for k in range(4):
        assert np.allclose(fam6.transformed_Q(k, -x), (-1) ** k * fam6.transformed_Q(k, x),
                           rtol=1e-10, atol=1e-14 * np.abs(fam6.transformed_Q(k, x)).max())
    (xs, wx), _ = fam6.quadrature()
    for k in range(fam6.degree + 1):
        val = np.sum(wx * fam6.p(k, xs) * fam6.transformed_Q(k, xs))
        assert val == pytest.approx(fam6.h[k], rel=1e-8)


def test_kernel_properties(fam6):
    chk = bo.kernel_checks(fam6)
    assert chk["trace_rel_error"] <= 1e-6
    assert chk["min_diagonal"] >= -1e-10
    assert chk["reproducing_scaled"] <= 1e-6
    u, v = np.array([0.2, -0.7]), np.array([1.1, 0.4])
    assert np.allclose(bo.kernel(fam6, "12", u, v), bo.kernel(fam6, "12", -u, -v))
    k21 = bo.kernel(fam6, "21", v, u)
    assert np.all(np.isfinite(k21)) and k21.shape == (2, 2)
    with pytest.raises(ValueError):
        bo.kernel(fam6, "13", u, v)
    with pytest.raises(ValueError):
        bo.kernel(bo.biorthogonal_family(SPEC, 6, 3), "11", u, v)


def test_kernel_11_from_pairs_matches_diagonal(fam6):
    x = np.linspace(-1.5, 1.5, 7)
    K = bo.kernel(fam6, "11", x, x)
    assert np.allclose(np.diag(K), bo.kernel_diagonal(fam6, x), rtol=1e-12)


def test_mod_three_note():
    fam = bo.biorthogonal_family(SPEC, 4, 3)
    assert any("multiple of 3" in n for n in fam.notes)
