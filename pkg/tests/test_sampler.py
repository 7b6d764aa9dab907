import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from critchaos import sampler
from critchaos.errors import NegativeSpectrum, UnresolvableMollifier, ValidationError
from critchaos.kernel import INFINITY, StarScaleParams, mollified_covariance, mollifier_by_name
from critchaos.sampler import (GridSpec, ScaleSchedule, TailSynthesizer, bridge_maximum, lattice_model,
                               mollify_field, refine_barrier, replicate_rng, sample_layers)
from critchaos.stats import mean_se

SEED = 424242
N_SMALL = 400


@pytest.fixture(scope="module")
def small_model():
    grid = GridSpec(1, 1024, 2.0)
    sched = ScaleSchedule.build(4.0, snapshots=(1.0, 2.0, 4.0))
    return lattice_model(grid, sched, StarScaleParams(eta1=0.25))


@pytest.fixture(scope="module")
def small_draws(small_model):
    return [sample_layers(small_model, SEED, r) for r in range(N_SMALL)]


def test_grid_validation():
    with pytest.raises(ValidationError):
        GridSpec(1, 1000, 2.0)
    with pytest.raises(ValidationError):
        GridSpec(1, 1024, 1.0)
    with pytest.raises(ValidationError):
        GridSpec(3, 64, 2.0)
    g = GridSpec(1, 8192, 2.0)
    assert g.spacing == 2 ** -12 and g.window_points == 4096


def test_resolvable_rule():
    g = GridSpec(1, 1024, 2.0)
    with pytest.raises(ValidationError):
        g.check_resolvable(7.0, StarScaleParams())
    # the scale time, not t, is what must be resolvable
    t = g.max_resolvable() - 0.1
    with pytest.raises(ValidationError):
        g.check_resolvable(t, StarScaleParams(eta1=0.9, eta2=1.0))


def test_schedule_hits_snapshots():
    s = ScaleSchedule.build(8.0, snapshots=(0.5, 1.0, 7.0))
    assert s.levels[0] == 0.0 and s.t_max == 8.0
    assert max(np.diff(s.levels)) <= sampler.MAX_STEP + 1e-12
    assert set(s.snapshot_indices().values()) == {0.5, 1.0, 7.0, 8.0}
    with pytest.raises(ValidationError):
        ScaleSchedule((0.0, 0.2), ())


def test_realized_variance_matches_t(small_model):
    for idx, lvl in small_model.schedule.snapshot_indices().items():
        assert small_model.level_variance(idx) == pytest.approx(lvl, abs=1e-6)


@pytest.mark.parametrize("t", [1.0, 2.0, 4.0])
def test_brownian_marginal_variance(small_draws, t):
    x = np.array([d[t].cumulative[0] for d in small_draws])
    m, se = mean_se(x ** 2)
    assert abs(m - t) <= 3 * se


def test_independent_increments(small_draws):
    a = np.array([d[1.0].cumulative[7] for d in small_draws])
    b = np.array([d[2.0].cumulative[7] for d in small_draws]) - a
    c = np.array([d[4.0].cumulative[7] for d in small_draws]) - a - b
    for u, v in ((a, b), (b, c), (a, c)):
        assert abs(np.corrcoef(u, v)[0, 1]) <= 3 / math.sqrt(N_SMALL)


def test_finite_range_independence(small_model, small_draws):
    # beyond level s0=2 the increments at lag >= exp(-s0') are independent
    prm = small_model.params
    from critchaos.kernel import solve_scale_time
    lag = math.exp(-solve_scale_time(2.0, prm))
    k = int(math.ceil(lag / small_model.grid.spacing))
    inc = np.array([d[4.0].cumulative - d[2.0].cumulative for d in small_draws])
    exact = small_model.covariance_at(small_model.schedule.levels.index(4.0)) - \
        small_model.covariance_at(small_model.schedule.levels.index(2.0))
    assert abs(exact[k]) < 1e-9
    r = np.corrcoef(inc[:, 0], inc[:, k])[0, 1]
    assert abs(r) <= 3 / math.sqrt(N_SMALL)


def test_stationarity(small_draws):
    t = 2.0
    X = np.array([d[t].cumulative for d in small_draws])
    lag = 20
    covs = [np.mean(X[:, i] * X[:, i + lag]) for i in (0, 300, 700)]
    se = np.std(X[:, 0] * X[:, lag], ddof=1) / math.sqrt(N_SMALL)
    assert max(covs) - min(covs) <= 3 * math.sqrt(2) * se


def test_determinism(small_model):
    a = sample_layers(small_model, SEED, 3)
    b = sample_layers(small_model, SEED, 3)
    c = sample_layers(small_model, SEED, 4)
    for lvl in a:
        assert np.array_equal(a[lvl].cumulative, b[lvl].cumulative)
        assert np.array_equal(a[lvl].barrier_max, b[lvl].barrier_max)
    assert not np.array_equal(a[4.0].cumulative, c[4.0].cumulative)


def test_streams_are_distinct():
    x = replicate_rng(1, 0, 0).standard_normal(8)
    y = replicate_rng(1, 0, 1).standard_normal(8)
    z = replicate_rng(1, 1, 0).standard_normal(8)
    assert not np.array_equal(x, y) and not np.array_equal(x, z)


def test_barrier_tracks_running_max(small_draws):
    for d in small_draws[:20]:
        X, B = d[4.0].cumulative, d[4.0].barrier_max
        assert np.all(B >= X - 2 ** 0.5 * 4.0 - 1e-12)
        assert np.all(d[4.0].barrier_max >= d[2.0].barrier_max)


def test_bridge_degenerate():
    assert bridge_maximum(0.0, 0.0, 1e-14, 1.0) == pytest.approx(0.0, abs=1e-6)
    assert bridge_maximum(0.3, -0.2, 0.0, 5.0) == pytest.approx(0.3)


def test_bridge_law_ks():
    rng = np.random.default_rng(7)
    m = bridge_maximum(0.0, 0.0, 1.0, rng.standard_exponential(100_000))
    res = stats.kstest(m, lambda x: 1.0 - np.exp(-2.0 * np.maximum(x, 0.0) ** 2))
    assert res.statistic * math.sqrt(m.size) <= 3 * 0.5  # 3 sigma of the Kolmogorov law (sd ~ 0.26)
    assert np.mean(m) == pytest.approx(math.sqrt(math.pi / 8), abs=3 * np.std(m) / math.sqrt(m.size))


def test_bridge_against_discretized_paths():
    # fine random-walk bridges underestimate the max by ~0.58 sqrt(dt); correct that and compare the mean
    rng = np.random.default_rng(11)
    n_steps, n_paths = 2000, 20_000
    dt = 1.0 / n_steps
    w = np.cumsum(rng.standard_normal((n_paths, n_steps)) * math.sqrt(dt), axis=1)
    tgrid = np.arange(1, n_steps + 1) * dt
    br = w - tgrid * w[:, -1:]
    mx = np.maximum(br.max(axis=1), 0.0) + 0.5826 * math.sqrt(dt)
    exact = bridge_maximum(0.0, 0.0, 1.0, rng.standard_exponential(n_paths))
    se = math.hypot(mx.std(), exact.std()) / math.sqrt(n_paths)
    assert abs(mx.mean() - exact.mean()) <= 3 * se


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), delta=st.floats(0, 2), e=st.floats(0, 20))
def test_bridge_max_dominates_endpoints(a, b, delta, e):
    m = bridge_maximum(a, b, delta, e)
    assert m >= max(a, b) - 1e-12


def test_refine_never_decreases(small_model):
    rng = np.random.default_rng(3)
    st_ = sample_layers(small_model, SEED, 0)[1.0].copy()
    before = st_.barrier_max.copy()
    prev = st_.cumulative - 2 ** 0.5 * 0.95
    refine_barrier(st_, prev, (0.95, 1.0), rng, 1)
    assert np.all(st_.barrier_max >= before)


def test_negative_spectrum_raises(monkeypatch):
    def boxcar(s0, s1, r, params, profile):
        return np.where(np.asarray(r) < 0.3, s1 - s0, 0.0)
    monkeypatch.setattr(sampler, "slab_covariance", boxcar)
    with pytest.raises(NegativeSpectrum):
        sampler.LatticeModel(GridSpec(1, 256, 2.0), ScaleSchedule.build(0.1), StarScaleParams())


def test_dense_policy_matches_clip_covariance():
    grid = GridSpec(1, 256, 2.0)
    sched = ScaleSchedule.build(1.0)
    clip = sampler.LatticeModel(grid, sched, StarScaleParams())
    dense = sampler.LatticeModel(grid, sched, StarScaleParams(), negative_policy="dense")
    np.testing.assert_allclose(clip.slab_variances, dense.slab_variances, atol=1e-12)
    x = sample_layers(dense, 5, 0)[1.0].cumulative
    assert np.all(np.isfinite(x))


# mollified fields -----------------------------------------------------------

EPS = 2 ** -5


@pytest.fixture(scope="module")
def moll_setup():
    grid = GridSpec(1, 4096, 2.0)
    sched = ScaleSchedule.build(math.log(1 / EPS) + 4.0, snapshots=(2.0,))
    model = lattice_model(grid, sched, StarScaleParams(eta1=0.0))
    return model, TailSynthesizer(model)


def test_lattice_weights_sum_to_one():
    for name in ("standard", "narrow"):
        for dim in (1, 2):
            w = mollifier_by_name(name, dim).lattice_weights(2 ** -4, 2 ** -8)
            assert math.fsum(w.ravel()) == pytest.approx(1.0, abs=1e-15)


def test_unresolvable_mollifier(moll_setup):
    model, synth = moll_setup
    top = sample_layers(model, SEED, 0, bridge=False, keep=(model.schedule.t_max,))[model.schedule.t_max]
    with pytest.raises(UnresolvableMollifier):
        mollify_field(top, 2.0 * model.grid.spacing, synth, mollifier_by_name("standard", 1))


def test_tail_rule_enforced_without_synthesis(moll_setup):
    model, synth = moll_setup
    top = sample_layers(model, SEED, 0, bridge=False, keep=(model.schedule.t_max,))[model.schedule.t_max]
    with pytest.raises(ValidationError):
        mollify_field(top, EPS, synth, mollifier_by_name("standard", 1), include_tail=False)


def test_mollified_variance_and_cross_covariance(moll_setup):
    model, synth = moll_setup
    grid = model.grid
    mol = mollifier_by_name("standard", 1)
    T = model.schedule.t_max
    lag = 40
    v2, c2 = [], []
    for r in range(300):
        snaps = sample_layers(model, SEED, r, bridge=False)
        noise = np.fft.rfft(replicate_rng(SEED, r, 3).standard_normal(grid.shape))
        mf = mollify_field(snaps[T], EPS, synth, mol, noise)
        v2.append(mf.values[0] ** 2)
        c2.append(mf.values[0] * snaps[2.0].cumulative[lag])
    target = mollified_covariance(INFINITY, EPS, 0.0, "k_eps", model.params, model.profile, grid.spacing)
    assert mf.variance == pytest.approx(target, abs=2e-3)
    m, se = mean_se(v2)
    assert abs(m - target) <= 3 * se
    cross = mollified_covariance(2.0, EPS, lag * grid.spacing, "kbar_cross", model.params, model.profile,
                                 grid.spacing)
    m, se = mean_se(c2)
    assert abs(m - cross) <= 3 * se
