import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize

from critchaos.kernel import (INFINITY, Mollifier, StarScaleParams, build_bump_profile, k_t, kappa, kbar_t,
                              kbar_table, log_envelope, mollified_covariance, slab_covariance, smooth_bump,
                              solve_scale_time, tail_variance)

# frozen regression values (computed once, see the oracle tests below)
KAPPA_HALF_D1 = 0.2544800908482458
ENVELOPE_C = {0.0: 1.1527782028382054, 0.25: 1.4025198894105184}  # max over t in {1,2,4,8,12,20}, table nodes
KEPS_DEVIATION = 0.036  # max |K_eps(0) - log(1/eps)| over eps in {2^-3, 2^-5}, eta1 = 0
WIDE_EPS_VAR = 0.4825789191250443  # K_eps(0) at eps=1, eta1=0; decreases in eps


def test_scale_time_identity_and_zero():
    assert solve_scale_time(5.0, StarScaleParams(eta1=0.0, eta2=3.0)) == 5.0
    assert solve_scale_time(0.0, StarScaleParams(eta1=0.7, eta2=2.0)) == 0.0


def test_scale_time_oracle():
    prm = StarScaleParams(eta1=1.0, eta2=1.0)
    oracle = optimize.brentq(lambda x: x - (1 - math.exp(-x)) - 1.0, 0.0, 10.0, xtol=1e-14)
    assert solve_scale_time(1.0, prm) == pytest.approx(oracle, abs=1e-10)
    assert oracle == pytest.approx(1.84141, abs=1e-5)


@given(t=st.floats(0.0, 30.0), eta1=st.floats(0.0, 1.0), eta2=st.floats(0.1, 5.0))
def test_scale_time_bracket(t, eta1, eta2):
    prm = StarScaleParams(eta1=eta1, eta2=eta2)
    tp = solve_scale_time(t, prm)
    assert t - 1e-9 <= tp <= t + eta1 / eta2 + 1e-9
    assert tp - (eta1 / eta2) * (1 - math.exp(-eta2 * tp)) == pytest.approx(t, abs=1e-9)


def test_kappa_endpoints(profile1):
    assert kappa(0.0, profile1) == 1.0
    assert kappa(1.3, profile1) == 0.0
    assert kappa(1.0, profile1) == 0.0


def test_kappa_half_against_quadrature_oracle(profile1):
    psi = lambda x: float(smooth_bump(abs(x), 1.0, 0.5))
    conv = lambda r: integrate.quad(lambda x: psi(x) * psi(r - x), r - 0.5, 0.5, epsabs=1e-14, epsrel=1e-13)[0]
    oracle = conv(0.5) / conv(0.0)
    assert oracle == pytest.approx(KAPPA_HALF_D1, abs=1e-9)
    assert kappa(0.5, profile1) == pytest.approx(KAPPA_HALF_D1, abs=1e-7)


@given(st.lists(st.floats(0.0, 1.2), min_size=2, max_size=20))
@settings(max_examples=50)
def test_kappa_bounded_and_monotone(rs):
    prof = build_bump_profile(1)
    rs = np.sort(np.asarray(rs))
    vals = kappa(rs, prof)
    assert np.all((vals >= 0) & (vals <= 1))
    assert np.all(np.diff(vals) <= 1e-12)


def test_kappa_2d_is_normalized():
    prof = build_bump_profile(2)
    assert kappa(0.0, prof) == 1.0
    assert kappa(1.0, prof) == 0.0
    assert 0.0 < kappa(0.5, prof) < 1.0


def test_slab_examples(params, profile1):
    assert slab_covariance(2.0, 3.0, 0.0, params, profile1) == pytest.approx(1.0, abs=1e-12)
    assert slab_covariance(2.0, 3.0, 0.2, params, profile1) == 0.0


def test_slab_support_is_exact(params, profile1):
    s0 = 1.5
    edge = math.exp(-solve_scale_time(s0, params))
    r = np.linspace(edge, 1.0, 50)
    assert np.all(slab_covariance(s0, 4.0, r, params, profile1) == 0.0)


def test_slabs_add_up(params, profile1):
    r = np.array([0.0, 0.01, 0.05, 0.2])
    whole = kbar_t(3.0, r, params, profile1)
    parts = slab_covariance(0.0, 1.0, r, params, profile1) + slab_covariance(1.0, 3.0, r, params, profile1)
    np.testing.assert_allclose(whole, parts, atol=1e-9)


def test_long_slab_at_half(params0, profile1):
    v = slab_covariance(0.0, 20.0, 0.5, params0, profile1)
    assert math.log(2) - ENVELOPE_C[0.0] <= v <= math.log(2)


def test_k_t_examples(params, profile1):
    prm = StarScaleParams(eta1=0.25, eta2=1.0, k0_constant=0.3)
    assert k_t(4.0, 0.0, prm, profile1) == pytest.approx(4.3, abs=1e-12)
    assert k_t(4.0, 1.0, prm, profile1) == pytest.approx(0.3, abs=1e-15)
    v = k_t(10.0, math.exp(-3.0), params, profile1)
    assert abs(v - 3.0) <= ENVELOPE_C[0.25]


@pytest.mark.parametrize("eta1", [0.0, 0.25])
def test_envelope_bound_on_table_nodes(eta1, profile1):
    prm = StarScaleParams(eta1=eta1, eta2=1.0)
    for t in (1.0, 4.0, 8.0):
        table = kbar_table(t, prm, profile1)
        env = log_envelope(t, table.nodes)
        assert np.all(table.values <= env + 1e-12)
        # frozen fitted C: the lower bound of the log-correlation envelope
        assert np.max(env - table.values) <= ENVELOPE_C[eta1] + 1e-9


@given(t=st.floats(0.1, 12.0), r=st.floats(1e-4, 1.5))
@settings(max_examples=40, deadline=None)
def test_kbar_steak_bound(t, r):
    prof = build_bump_profile(1)
    prm = StarScaleParams(eta1=0.25, eta2=1.0)
    v = kbar_t(t, r, prm, prof)
    assert 0.0 <= v <= min(t, max(math.log(1.0 / r), 0.0)) + 1e-10


def test_slab_spectrum_nonnegative(params, profile1):
    # PSD witness: periodized slab covariance has a nonnegative DFT up to round-off
    n, L = 4096, 2.0
    j = np.arange(n)
    lag = np.minimum(j, n - j) * (L / n)
    row = slab_covariance(1.0, 1.05, lag, params, profile1)
    lam = np.fft.rfft(row).real
    assert lam.min() >= -1e-9 * lam.max()


def test_kbar_cross_zero_at_t0(params0, profile1):
    assert mollified_covariance(0.0, 2 ** -4, 0.3, "kbar_cross", params0, profile1, spacing=2 ** -12) == 0.0


def test_kbar_cross_dense_quadrature_oracle(params, profile1):
    eps, r, t = 2 ** -4, 0.3, 6.0
    mol = Mollifier("standard", 1.0, 1)
    tp = solve_scale_time(t, params)

    def f(s, z):
        return params.weight(s) * float(kappa(math.exp(s) * abs(r - z), profile1)) * float(mol(abs(z) / eps)) / eps

    oracle, err = integrate.dblquad(f, -eps, eps, 0.0, tp, epsabs=1e-11, epsrel=1e-11)
    v = mollified_covariance(t, eps, r, "kbar_cross", params, profile1, spacing=2 ** -12)
    assert abs(v - oracle) <= 1e-6


def test_kbar_cross_rejects_infinity(params, profile1):
    with pytest.raises(ValueError):
        mollified_covariance(INFINITY, 2 ** -4, 0.1, "kbar_cross", params, profile1, spacing=2 ** -12)


@pytest.mark.parametrize("eps", [2 ** -3, 2 ** -5])
def test_k_eps_log_bound(eps, params0, profile1):
    v = mollified_covariance(INFINITY, eps, 0.0, "k_eps", params0, profile1, spacing=2 ** -12)
    assert abs(v - math.log(1.0 / eps)) <= KEPS_DEVIATION


def test_k_eps_vanishes_beyond_support(params0, profile1):
    eps = 2 ** -3
    assert mollified_covariance(INFINITY, eps, 1.0 + 2 * eps, "k_eps", params0, profile1, spacing=2 ** -10) == 0.0


def test_tail_variance_exceeds_rule_without_synthesis(params0, profile1):
    # why the exact spectral tail exists: the +4 truncation alone leaves ~1e-2
    v = tail_variance(math.log(2 ** 5) + 4.0, 2 ** -5, params0, profile1)
    assert 1e-3 < v < 5e-2


def test_wide_mollifier_variance_bounded(params0, profile1):
    # eps beyond the kernel range: Var(X_eps) stays below the frozen table value
    for eps in (1.0, 2.0):
        v = mollified_covariance(INFINITY, eps, 0.0, "k_eps", params0, profile1, spacing=2 ** -8)
        assert 0.0 < v <= WIDE_EPS_VAR
