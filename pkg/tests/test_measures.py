import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critchaos.errors import ValidationError
from critchaos.measures import (SetSpec, derivative_density, integrate, levy_prokhorov_approx, phi_modulus,
                                renormalize, varphi, weight_fields)
from critchaos.sampler import FieldState

H = 2 ** -6
WP = 64


def make_state(x, barrier=None, level=2.0, variance=2.0):
    x = np.asarray(x, dtype=float)
    b = np.full_like(x, -1.0) if barrier is None else np.asarray(barrier, dtype=float)
    return FieldState(level, 0, x, b, variance)


def test_renormalize_examples():
    assert renormalize(3.0, "M_crit", t=2.0) == pytest.approx(3.0 * math.sqrt(math.pi))
    assert renormalize(3.0, "M_eps", eps=math.exp(-2.0)) == pytest.approx(3.0 * math.sqrt(math.pi))
    assert renormalize(3.0, "M_alpha", alpha=math.sqrt(2.0) - 0.25) == pytest.approx(12.0)
    assert renormalize(3.0, "D") == 3.0
    with pytest.raises(ValidationError):
        renormalize(1.0, "M_alpha", alpha=math.sqrt(2.0))


def test_gauges():
    assert phi_modulus(0.5) == pytest.approx(math.exp(-0.25))
    u0 = math.exp(-math.e)
    assert phi_modulus(u0 * (1 - 1e-9)) == pytest.approx(math.exp(-0.25), rel=1e-6)
    assert varphi(math.exp(-1.0), 1) == pytest.approx(math.exp(-1.0))
    assert varphi(math.exp(-1.0), 2) == pytest.approx(math.exp(-2.0))


@given(st.floats(1e-12, 10.0))
def test_gauges_positive(u):
    assert phi_modulus(u) > 0 and varphi(u, 1) > 0


def test_setspec_measures():
    E = SetSpec((((0.0, 0.25),), ((0.5, 0.75),)), "two")
    assert E.lebesgue(H, WP, 1) == 32 * H
    assert E.diameter(H, WP) == pytest.approx(0.75)
    assert SetSpec.window(2).lebesgue(H, WP, 2) == 1.0
    with pytest.raises(ValidationError):
        SetSpec((((0.0, 0.3),),)).mask(H, WP, 1)
    with pytest.raises(ValidationError):
        SetSpec((((0.5, 1.5),),)).mask(H, WP, 1)


def test_zero_field_closed_form():
    V, t, q = 2.0, 2.0, 1.5
    st_ = make_state(np.zeros(128), level=t, variance=V)
    a = math.sqrt(2.0)
    w = weight_fields(st_, a, q, H, WP)
    assert integrate(w, None, "M_crit") == pytest.approx(math.exp(-V))
    assert integrate(w, None, "D") == pytest.approx((a * t + q) * math.exp(-V))
    assert integrate(w, None, "D", truncated=False) == pytest.approx(a * V * math.exp(-V))
    half = SetSpec.cube(0.5, 1)
    assert integrate(w, half, "M_crit") == pytest.approx(0.5 * math.exp(-V))
    empty = SetSpec((((0.25, 0.25),),), "empty")
    assert integrate(w, empty, "D") == 0.0


def test_q_zero_kills_everything():
    st_ = make_state(np.zeros(128), barrier=np.zeros(128))
    w = weight_fields(st_, math.sqrt(2.0), 0.0, H, WP)
    assert np.all(w.W_q == 0.0) and np.all(w.Z_q == 0.0)


@given(seed=st.integers(0, 2 ** 32 - 1), q1=st.floats(0.0, 3.0), dq=st.floats(0.0, 3.0))
@settings(max_examples=50)
def test_indicator_and_monotone_coupling(seed, q1, dq):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1.0, 128)
    b = x - 2.0 + rng.exponential(1.0, 128)
    st_ = make_state(x, b)
    a = math.sqrt(2.0)
    w1 = weight_fields(st_, a, q1, H, WP)
    w2 = weight_fields(st_, a, q1 + dq, H, WP)
    wb = b[:WP]
    assert np.all(w1.W_q[wb >= q1] == 0.0)
    assert np.all(w1.W_q[wb < q1] == w1.W_alpha[wb < q1])
    assert np.all(w1.Z_q >= 0.0)
    assert integrate(w2, None, "M_crit") >= integrate(w1, None, "M_crit")
    if wb.max() < q1:
        assert integrate(w1, None, "M_crit") == integrate(w1, None, "M_crit", truncated=False)


@given(seed=st.integers(0, 2 ** 32 - 1), alpha=st.floats(0.3, 1.4))
@settings(max_examples=30)
def test_derivative_density_finite_difference(seed, alpha):
    rng = np.random.default_rng(seed)
    st_ = make_state(rng.normal(0, 1.0, 128))
    d = 1e-4
    hi = weight_fields(st_, alpha + d, 10.0, H, WP).W_alpha
    lo = weight_fields(st_, alpha - d, 10.0, H, WP).W_alpha
    fd = -(hi - lo) / (2 * d)
    exact = derivative_density(st_, alpha, H, WP)
    assert np.max(np.abs(fd - exact)) <= 1e-6 * np.max(np.abs(exact)) + 1e-12


def test_alpha_out_of_range():
    st_ = make_state(np.zeros(128))
    with pytest.raises(ValidationError):
        weight_fields(st_, 1.5, 1.0, H, WP)


# Levy-Prokhorov ---------------------------------------------------------------

def _lp_brute(mu, nu, h):
    n = mu.size
    idx = np.arange(n)
    masks = ((np.arange(1, 2 ** n)[:, None] >> idx) & 1).astype(bool)
    dist = np.abs(idx[:, None] - idx[None, :])
    mu_a, nu_a = masks @ mu, masks @ nu
    for k in range(n + 1):
        cover = (masks.astype(np.int32) @ (dist <= k).astype(np.int32)) > 0
        if np.all(mu_a <= cover @ nu + k * h + 1e-12) and np.all(nu_a <= cover @ mu + k * h + 1e-12):
            return k * h
    return (n + 1) * h


def test_lp_identity():
    mu = np.random.default_rng(0).random(32)
    assert levy_prokhorov_approx(mu, mu, H) == 0.0


def test_lp_one_cell_shift():
    rng = np.random.default_rng(1)
    mu = np.zeros(64)
    mu[10:40] = rng.random(30)
    mu *= H / mu.sum()
    assert levy_prokhorov_approx(mu, np.roll(mu, 1), H) <= H


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_lp_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    h = 1 / 64
    mu = rng.exponential(size=16) * 0.1 / 16 * (rng.random(16) < 0.6)
    nu = rng.exponential(size=16) * 0.1 / 16 * (rng.random(16) < 0.6)
    assert levy_prokhorov_approx(mu, nu, h) == _lp_brute(mu, nu, h)


def test_lp_2d_lower_bound_symmetric():
    rng = np.random.default_rng(5)
    mu = rng.random((16, 16)) * 1e-3
    nu = np.roll(mu, 2, axis=0)
    a = levy_prokhorov_approx(mu, nu, 1 / 16)
    assert a == levy_prokhorov_approx(nu, mu, 1 / 16)
    assert 0 <= a <= 2 / 16
