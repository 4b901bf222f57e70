import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twomatrix import sampler as smp
from twomatrix.potentials import PotentialSpec


def random_state(spec, n, chains, seed):
    rng = np.random.default_rng(seed)
    st_ = smp.MatrixPairState.zeros(spec, n, chains, seed)
    for M in (st_.m1, st_.m2):
        A = rng.standard_normal((chains, n, n)) + 1j * rng.standard_normal((chains, n, n))
        M[:] = 0.5 * (A + np.conj(np.swapaxes(A, 1, 2)))
    st_.action = st_.recompute(spec)
    return st_, rng


def test_zero_proposal_has_zero_delta():
    spec = PotentialSpec((0.0, 0.0, 0.5, 0.0, 0.1), -0.5, 1.3)
    s, _ = random_state(spec, 4, 3, 0)
    for which in (1, 2):
        assert np.all(smp.action_delta(spec, s, which, 1, 2, np.zeros(3)) == 0.0)
        assert np.all(smp.action_delta(spec, s, which, 0, 0, np.zeros(3)) == 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.sampled_from([1, 2]), st.integers(0, 10**6),
       st.floats(-2.0, 2.0), st.floats(0.1, 2.0))
def test_delta_matches_recomputation(i, j, which, seed, alpha, tau):
    i, j = min(i, j), max(i, j)
    spec = PotentialSpec((0.0, 0.0, 0.5, 0.0, 0.2), alpha, tau)
    s, rng = random_state(spec, 4, 2, seed)
    d = rng.standard_normal(2) + (1j * rng.standard_normal(2) if i != j else 0.0)
    dS = smp.action_delta(spec, s, which, i, j, d)
    m1, m2 = s.m1.copy(), s.m2.copy()
    smp._apply(m1 if which == 1 else m2, i, j, d)
    new = smp.action(spec, m1, m2)
    assert np.allclose(new - s.action, dS, rtol=1e-9, atol=1e-9 * np.abs(new).max())


def test_coupling_term_formula():
    spec = PotentialSpec.quadratic(0.0, 0.8)
    s, _ = random_state(spec, 3, 1, 5)
    d = np.array([0.3 - 0.2j])
    n, tau = 3, 0.8
    dS = smp.action_delta(spec, s, 1, 0, 2, d)
    m = s.m1[0, 0, 2]
    quad = n * 0.5 * 2 * (abs(m + d[0]) ** 2 - abs(m) ** 2)
    coupling = -n * tau * 2 * np.real(d[0] * np.conj(s.m2[0, 0, 2]))
    assert dS[0] == pytest.approx(quad + coupling, rel=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        smp.ChainConfig(n=1)
    with pytest.raises(ValueError):
        smp.ChainConfig(samples=0)
    assert smp.ChainConfig(n=9, n_chains=10, samples=3).n_eigenvalues == 270


def test_determinism_and_hermiticity():
    spec = PotentialSpec.quadratic(0.0, 1.0)
    cfg = smp.ChainConfig(n=3, n_chains=8, burn_in=10, thin=2, samples=4, seed=7)
    a = smp.run_chain(spec, cfg)
    b = smp.run_chain(spec, cfg)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert a.diagnostics["hermitian"]
    assert a.diagnostics["max_action_drift"] <= 1e-8
    c = smp.run_chain(spec, smp.ChainConfig(n=3, n_chains=8, burn_in=10, thin=2, samples=4, seed=8))
    assert not np.array_equal(a.eigenvalues, c.eigenvalues)


def test_gaussian_second_moment_small_n():
    # decoupled quadratic V: E Tr M1^2 = n for the weight exp(-n Tr M^2 / 2)
    spec = PotentialSpec.quadratic(0.0, 1e-9)
    cfg = smp.ChainConfig(n=2, n_chains=300, burn_in=100, thin=5, samples=20, seed=1)
    res = smp.run_chain(spec, cfg)
    tr2 = np.sum(res.eigenvalues ** 2, axis=-1).ravel()
    assert tr2.mean() == pytest.approx(2.0, abs=5 * tr2.std() / np.sqrt(tr2.size / 5))
    for k in (1, 3):
        m = res.diagnostics["odd_moments"][k]
        assert abs(m["mean"]) < 3 * m["stderr"] * np.sqrt(5)
    assert smp.ACCEPT_LO <= res.acceptance["m1"] <= smp.ACCEPT_HI


def test_comparison_detects_shift():
    rng = np.random.default_rng(0)
    # semicircle samples by rejection
    x = rng.uniform(-2, 2, 200000)
    keep = rng.uniform(0, 1, x.size) < np.sqrt(np.clip(1 - x * x / 4, 0, 1))
    s = x[keep][:50000]
    good = smp.compare_to_reference(s, cdf=smp.semicircle_cdf)
    bad = smp.compare_to_reference(s + 0.1, cdf=smp.semicircle_cdf)
    assert good.ks < 0.01 and good.passes_chi2()
    assert bad.ks > 0.02 and not bad.passes_chi2()
    g = np.linspace(-2, 2, 2001)
    dens = smp.compare_to_reference(s, density=np.sqrt(4 - g * g) / (2 * np.pi), grid=g)
    assert dens.ks == pytest.approx(good.ks, abs=1e-3)
