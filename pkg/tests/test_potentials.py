import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twomatrix.potentials import (PotentialSpec, check_closed_forms, cubic_critical_points,
                                  effective_field_v1, effective_field_v3, eval_potential,
                                  sigma2_density, solve_depressed_cubic, x_star, y_star)

alphas = st.floats(-4.0, 4.0, allow_nan=False)
taus = st.floats(0.1, 4.0, allow_nan=False)


def brute_min(spec, x):
    s = np.linspace(-8.0, 8.0, 400001)
    return np.min(0.25 * s**4 + 0.5 * spec.alpha * s**2 - spec.tau * x * s)


def test_closed_forms_alpha_zero():
    for tau in (0.3, 1.0, 2.5):
        chk = check_closed_forms(PotentialSpec.quadratic(0.0, tau), 1000)
        assert chk["max_dev_v1"] <= 1e-10
        assert chk["max_dev_sigma2"] <= 1e-10


def test_closed_forms_reject_nonzero_alpha():
    with pytest.raises(ValueError):
        check_closed_forms(PotentialSpec.quadratic(0.5, 1.0))


@pytest.mark.parametrize("bad", [dict(v_coeffs=(0.0, 1.0, 0.5)), dict(tau=0.0), dict(tau=-1.0)])
def test_invalid_spec(bad):
    kw = dict(v_coeffs=(0.0, 0.0, 0.5), alpha=0.0, tau=1.0)
    kw.update(bad)
    with pytest.raises(ValueError):
        PotentialSpec(kw["v_coeffs"], kw["alpha"], kw["tau"])


@settings(max_examples=60, deadline=None)
@given(p=st.floats(-5.0, 5.0), q=st.floats(-20.0, 20.0))
def test_cubic_roots_are_roots(p, q):
    r = solve_depressed_cubic(p, np.array([q]))[0]
    r = r[~np.isnan(r)]
    assert r.size in (1, 3)
    scale = 1.0 + abs(p) * np.max(np.abs(r)) + abs(q) + np.max(np.abs(r)) ** 3
    assert np.all(np.abs(r**3 + p * r + q) <= 1e-12 * scale)


@settings(max_examples=25, deadline=None)
@given(alpha=alphas, tau=taus, x=st.floats(-3.0, 3.0))
def test_v1_matches_brute_force_minimum(alpha, tau, x):
    spec = PotentialSpec.quadratic(alpha, tau)
    expect = eval_potential(spec, "V", x) + brute_min(spec, x)
    assert abs(float(effective_field_v1(spec, x)) - expect) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(alpha=alphas, tau=taus)
def test_fields_even_and_v3_nonnegative(alpha, tau):
    spec = PotentialSpec.quadratic(alpha, tau)
    x = np.linspace(-4.0, 4.0, 161)
    assert np.allclose(effective_field_v1(spec, x), effective_field_v1(spec, -x), atol=1e-12)
    v3 = effective_field_v3(spec, x)
    assert np.all(v3 >= 0.0)
    assert np.allclose(v3, v3[::-1], atol=1e-12)
    assert np.all(v3[np.abs(x) >= x_star(spec)] == 0.0)
    t = np.linspace(-4.0, 4.0, 161)
    s2 = sigma2_density(spec, t)
    assert np.all(s2 >= 0.0)
    assert np.allclose(s2, s2[::-1], atol=1e-12)


def test_v3_is_barrier_height():
    spec = PotentialSpec.quadratic(-2.0, 1.0)
    x = 0.3
    s = np.linspace(-3.0, 3.0, 600001)
    f = 0.25 * s**4 + 0.5 * spec.alpha * s**2 - spec.tau * x * s
    # local max between the wells and the shallower local minimum
    i_max = np.argmax(np.where(np.abs(s) < 1.0, f, -np.inf))
    other = np.min(f[s < 0.0])
    assert abs(float(effective_field_v3(spec, x)) - (f[i_max] - other)) <= 1e-8
    cp = cubic_critical_points(spec, x)
    assert cp.s1 > 0.0 and cp.s2 < 0.0 and len(cp.roots()) == 3


def test_sigma2_gap_for_positive_alpha():
    spec = PotentialSpec.quadratic(2.0, 0.8)
    ys = y_star(spec)
    assert ys == pytest.approx(2.0 / 0.8 * (2.0 / 3.0) ** 1.5)
    t = np.linspace(-0.99 * ys, 0.99 * ys, 101)
    assert np.all(sigma2_density(spec, t) == 0.0)
    assert sigma2_density(spec, 1.2 * ys) > 0.0


def test_sigma2_large_t_growth():
    # sigma2 grows like (sqrt(3) / 2 pi) tau^(4/3) |t|^(1/3) at infinity for any alpha
    spec = PotentialSpec.quadratic(1.5, 2.0)
    t = 1e8
    ref = np.sqrt(3.0) / (2 * np.pi) * 2.0 ** (4 / 3) * t ** (1 / 3)
    assert sigma2_density(spec, t) == pytest.approx(ref, rel=1e-4)

