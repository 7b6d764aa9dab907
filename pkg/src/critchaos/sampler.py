"""Multi-scale sampling of the martingale field on a periodic lattice.

Each slab increment ``Xbar_{s_{i+1}} - Xbar_{s_i}`` is a stationary Gaussian
vector on the torus, drawn by circulant embedding:

    X = irfft( sqrt(lambda) * rfft(Z) ),  Z white noise,

where ``lambda`` is the DFT of the periodized slab covariance.  The torus has
side at least 2 so that, with kernel support below 1, only the zeroth image
contributes at lags <= 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.linalg import cholesky

from .errors import NegativeSpectrum, UnresolvableMollifier, ValidationError
from .kernel import (BumpProfile, Mollifier, StarScaleParams, build_bump_profile,
                     mollified_tail_spectrum, slab_covariance, solve_scale_time)

MAX_STEP = 0.05
NEG_TOL = 1e-9
DENSE_LIMIT = 4096
TAIL_RULE = 1e-3


@dataclass(frozen=True)
class GridSpec:
    dim: int = 1
    points_per_side: int = 8192
    box_side: float = 2.0

    def __post_init__(self):
        n = self.points_per_side
        if self.dim not in (1, 2):
            raise ValidationError(f"dim must be 1 or 2, got {self.dim}")
        if n < 2 or n & (n - 1):
            raise ValidationError(f"points_per_side must be a power of two, got {n}")
        if self.box_side < 2.0:
            raise ValidationError(f"box_side must be >= 2, got {self.box_side}")
        w = 1.0 / self.spacing
        if abs(w - round(w)) > 1e-9:
            raise ValidationError("the unit window must be a whole number of cells")

    @property
    def spacing(self) -> float:
        return self.box_side / self.points_per_side

    @property
    def window_points(self) -> int:
        """Cells per side of the observation window [0, 1]^d."""
        return int(round(1.0 / self.spacing))

    @property
    def shape(self) -> tuple:
        return (self.points_per_side,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_side ** self.dim

    def max_resolvable(self) -> float:
        return math.log(1.0 / self.spacing)

    def check_resolvable(self, t_max: float, params: StarScaleParams) -> None:
        tp = solve_scale_time(t_max, params)
        if tp > self.max_resolvable() + 1e-12:
            raise ValidationError(
                f"t_max={t_max} (scale time {tp:.4f}) exceeds log(1/spacing)={self.max_resolvable():.4f}"
            )

    def lag_distances(self) -> np.ndarray:
        """Wrapped distance of every lattice site to the origin."""
        n = self.points_per_side
        j = np.arange(n)
        one = np.minimum(j, n - j) * self.spacing
        if self.dim == 1:
            return one
        return np.hypot(one[:, None], one[None, :])

    def frequencies(self) -> np.ndarray:
        """Radial angular frequency of each rfft mode."""
        n = self.points_per_side
        L = self.box_side
        last = 2.0 * np.pi * np.arange(n // 2 + 1) / L
        if self.dim == 1:
            return last
        first = 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / n) / L
        return np.hypot(first[:, None], last[None, :])

    def mode_multiplicity(self) -> np.ndarray:
        """Weights turning a sum over rfft modes into a full-spectrum sum."""
        n = self.points_per_side
        m = np.full(n // 2 + 1, 2.0)
        m[0] = 1.0
        m[-1] = 1.0
        if self.dim == 1:
            return m
        return np.broadcast_to(m, (n, n // 2 + 1))

    def window_slice(self):
        w = self.window_points
        return (slice(0, w),) * self.dim


@dataclass(frozen=True)
class ScaleSchedule:
    levels: tuple
    snapshot_levels: tuple

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.size < 2 or lv[0] != 0.0:
            raise ValidationError("levels must start at 0 and contain at least one slab")
        steps = np.diff(lv)
        if np.any(steps <= 0):
            raise ValidationError("levels must be strictly increasing")
        if steps.max() > MAX_STEP + 1e-12:
            raise ValidationError(f"max level step {steps.max():.4g} exceeds {MAX_STEP}")
        missing = [s for s in self.snapshot_levels if not np.any(np.isclose(lv, s, rtol=0, atol=1e-12))]
        if missing:
            raise ValidationError(f"snapshot levels {missing} are not schedule levels")

    @classmethod
    def build(cls, t_max: float, snapshots=(), max_step: float = MAX_STEP) -> "ScaleSchedule":
        """Uniform ladder hitting every snapshot level exactly."""
        marks = sorted({0.0, float(t_max), *(float(s) for s in snapshots if 0 < s <= t_max)})
        levels = [0.0]
        for a, b in zip(marks[:-1], marks[1:]):
            k = max(1, math.ceil((b - a) / max_step - 1e-9))
            levels.extend(a + (b - a) * np.arange(1, k + 1) / k)
            levels[-1] = b
        snaps = tuple(sorted({float(s) for s in snapshots if 0 < s <= t_max} | {float(t_max)}))
        return cls(tuple(float(x) for x in levels), snaps)

    @property
    def t_max(self) -> float:
        return self.levels[-1]

    def snapshot_indices(self) -> dict:
        lv = np.asarray(self.levels)
        return {int(np.argmin(np.abs(lv - s))): s for s in self.snapshot_levels}


@dataclass
class FieldState:
    """Cumulative field and running barrier maximum at one schedule level."""

    level: float
    level_index: int
    cumulative: np.ndarray
    barrier_max: np.ndarray
    variance: float
    x0: float = 0.0
    k0: float = 0.0

    @property
    def total(self) -> np.ndarray:
        """X_t = X_0 + Xbar_t."""
        return self.cumulative + self.x0

    @property
    def total_variance(self) -> float:
        return self.variance + self.k0

    def copy(self) -> "FieldState":
        return FieldState(self.level, self.level_index, self.cumulative.copy(),
                          self.barrier_max.copy(), self.variance, self.x0, self.k0)


@dataclass
class MollifiedField:
    eps: float
    values: np.ndarray
    source_t: float
    variance: float
    tail_variance: float
    mollifier: str = "standard"


def _full_sum(arr, grid: GridSpec) -> float:
    return float(np.sum(arr * grid.mode_multiplicity()))


def _periodized(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    return values.reshape(grid.shape)


class LatticeModel:
    """Per-slab circulant spectra for a (grid, schedule, kernel) triple.

    Construction evaluates each slab covariance at the exact lattice lags,
    so the sampled field's covariance equals the table values at the lattice.
    """

    def __init__(self, grid: GridSpec, schedule: ScaleSchedule, params: StarScaleParams,
                 profile: BumpProfile | None = None, negative_policy: str = "clip"):
        if params.dim != grid.dim:
            raise ValidationError(f"kernel dim {params.dim} does not match grid dim {grid.dim}")
        if negative_policy not in ("clip", "dense"):
            raise ValidationError(f"unknown negative_policy {negative_policy!r}")
        grid.check_resolvable(schedule.t_max, params)
        self.grid = grid
        self.schedule = schedule
        self.params = params
        self.profile = profile if profile is not None else build_bump_profile(params.dim)
        self.negative_policy = negative_policy
        self.dense_factors = {}
        dist = grid.lag_distances()
        flat = dist.ravel()
        # unique lags keep the d=2 quadrature small
        uniq, inverse = np.unique(np.round(flat / grid.spacing, 9), return_inverse=True)
        uniq = uniq * grid.spacing
        levels = schedule.levels
        roots, variances, spectra = [], [], []
        for i, (a, b) in enumerate(zip(levels[:-1], levels[1:])):
            support = math.exp(-solve_scale_time(a, params))
            live = uniq < support
            vals = np.zeros_like(uniq)
            vals[live] = slab_covariance(a, b, uniq[live], params, self.profile)
            vals[0] = b - a
            cov = vals[inverse].reshape(dist.shape)
            lam = sfft.rfftn(cov).real
            top = lam.max()
            low = lam.min()
            if low < -NEG_TOL * top:
                raise NegativeSpectrum(
                    f"NegativeSpectrum: slab [{a:.4f}, {b:.4f}] has eigenvalue {low:.3e} (max {top:.3e})"
                )
            if low < 0 and negative_policy == "dense":
                if grid.size > DENSE_LIMIT:
                    raise ValidationError(f"dense fallback limited to {DENSE_LIMIT} points")
                self.dense_factors[i] = _dense_factor(cov.ravel(), grid)
            lam = np.maximum(lam, 0.0)
            spectra.append(lam)
            roots.append(np.sqrt(lam))
            variances.append(_full_sum(lam, grid) / grid.size)
        self.sqrt_spectra = roots
        self.slab_variances = np.array(variances)
        cum = np.zeros_like(spectra[0])
        self.cumulative_spectra = {}
        for i, lam in enumerate(spectra):
            cum = cum + lam
            if i + 1 in schedule.snapshot_indices():
                self.cumulative_spectra[i + 1] = cum.copy()
        self._final_spectrum = cum

    def level_variance(self, index: int) -> float:
        """Realized discrete Var(Xbar_{s_index}(x))."""
        return float(math.fsum(self.slab_variances[:index]))

    def cumulative_spectrum(self, index: int) -> np.ndarray:
        if index == len(self.schedule.levels) - 1:
            return self._final_spectrum
        return self.cumulative_spectra[index]

    def covariance_at(self, index: int) -> np.ndarray:
        """Periodized lattice covariance of Xbar at a snapshot level."""
        return sfft.irfftn(self.cumulative_spectrum(index), s=self.grid.shape)


def _dense_factor(cov_row: np.ndarray, grid: GridSpec) -> np.ndarray:
    n = grid.size
    idx = np.arange(n)
    if grid.dim == 1:
        mat = cov_row[(idx[None, :] - idx[:, None]) % n]
    else:
        m = grid.points_per_side
        i, j = np.divmod(idx, m)
        di = (i[None, :] - i[:, None]) % m
        dj = (j[None, :] - j[:, None]) % m
        mat = cov_row[di * m + dj]
    scale = float(np.mean(np.diag(mat)))
    jitter = 1e-12
    while True:
        try:
            return cholesky(mat + jitter * scale * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > 1e-6:
                raise


@lru_cache(maxsize=8)
def lattice_model(grid: GridSpec, schedule: ScaleSchedule, params: StarScaleParams,
                  negative_policy: str = "clip") -> LatticeModel:
    return LatticeModel(grid, schedule, params, negative_policy=negative_policy)


def replicate_rng(master_seed: int, replicate: int, stream: int) -> np.random.Generator:
    """Counter-based split: stream ``stream`` of replicate ``replicate``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replicate), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def bridge_maximum(a, b, delta, exp_draw):
    """Maximum of a Brownian bridge from ``a`` to ``b`` over time ``delta``.

    Inverts P(max <= m) = 1 - exp(-2 (m - a)(m - b) / delta) with an
    Exp(1) variate ``exp_draw`` (that is, -log U).
    """
    gap = b - a
    return 0.5 * (a + b + np.sqrt(gap * gap + 2.0 * delta * exp_draw))


def refine_barrier(state: FieldState, previous: np.ndarray, slab: tuple, rng: np.random.Generator,
                   dim: int) -> FieldState:
    """Merge exact per-point bridge maxima of the slab into ``state.barrier_max``.

    ``previous`` holds the barrier process Xbar_s - sqrt(2d) s at the slab start,
    ``state`` is already advanced to the slab end.
    """
    s0, s1 = slab
    drift = math.sqrt(2.0 * dim)
    end = state.cumulative - drift * s1
    peak = bridge_maximum(previous, end, s1 - s0, rng.standard_exponential(end.shape))
    np.maximum(state.barrier_max, peak, out=state.barrier_max)
    return state


def sample_layers(model: LatticeModel, seed: int, replicate: int = 0, bridge: bool = True,
                  keep=None):
    """Draw one replicate and return its snapshots as ``{level: FieldState}``.

    ``keep`` optionally restricts the stored snapshot levels.
    """
    grid, sched, params = model.grid, model.schedule, model.params
    gauss = replicate_rng(seed, replicate, 0)
    unif = replicate_rng(seed, replicate, 1)
    extra = replicate_rng(seed, replicate, 2)
    x0 = float(extra.standard_normal()) * math.sqrt(params.k0_constant) if params.k0_constant > 0 else 0.0
    drift = math.sqrt(2.0 * grid.dim)
    state = FieldState(0.0, 0, np.zeros(grid.shape), np.zeros(grid.shape), 0.0, x0, params.k0_constant)
    snaps = sched.snapshot_indices()
    out = {}
    levels = sched.levels
    for i, (a, b) in enumerate(zip(levels[:-1], levels[1:])):
        z = gauss.standard_normal(grid.shape)
        if i in model.dense_factors:
            inc = (model.dense_factors[i] @ z.ravel()).reshape(grid.shape)
        else:
            inc = sfft.irfftn(model.sqrt_spectra[i] * sfft.rfftn(z), s=grid.shape)
        previous = state.cumulative - drift * a
        state.cumulative += inc
        state.level = b
        state.level_index = i + 1
        end = state.cumulative - drift * b
        np.maximum(state.barrier_max, end, out=state.barrier_max)
        if bridge:
            refine_barrier(state, previous, (a, b), unif, grid.dim)
        if i + 1 in snaps:
            lvl = snaps[i + 1]
            if keep is None or any(abs(lvl - k) < 1e-12 for k in keep):
                snap = state.copy()
                snap.level = lvl
                snap.variance = model.level_variance(i + 1)
                out[lvl] = snap
    return out


class TailSynthesizer:
    """Exact spectral sampler for the mollified layers above the lattice top level."""

    def __init__(self, model: LatticeModel):
        self.model = model
        self.grid = model.grid
        self.t_cut = model.schedule.t_max
        self._theta = {}
        self._tail = {}

    def lattice_transfer(self, eps: float, mollifier: Mollifier) -> np.ndarray:
        """rfft of the renormalized lattice mollifier weights placed on the torus."""
        key = ("lat", eps, mollifier.name, mollifier.sharpness)
        if key not in self._theta:
            grid = self.grid
            w = mollifier.lattice_weights(eps, grid.spacing)
            m = (w.shape[0] - 1) // 2
            if 2 * m + 1 > grid.points_per_side:
                raise ValidationError("mollifier wider than the torus")
            full = np.zeros(grid.shape)
            idx = np.arange(-m, m + 1) % grid.points_per_side
            if grid.dim == 1:
                full[idx] = w
            else:
                full[np.ix_(idx, idx)] = w
            self._theta[key] = sfft.rfftn(full)
        return self._theta[key]

    def tail_root(self, eps: float, mollifier: Mollifier) -> np.ndarray:
        """sqrt of the circulant eigenvalues of X_eps - X_{T,eps}."""
        key = ("tail", eps, mollifier.name, mollifier.sharpness)
        if key not in self._tail:
            m = self.model
            xi = self.grid.frequencies()
            spec = mollified_tail_spectrum(xi, self.t_cut, eps, m.params, m.profile, mollifier)
            lam = np.maximum(spec, 0.0) / self.grid.spacing ** self.grid.dim
            self._tail[key] = np.sqrt(lam)
        return self._tail[key]

    def tail_variance(self, eps: float, mollifier: Mollifier) -> float:
        root = self.tail_root(eps, mollifier)
        return _full_sum(root ** 2, self.grid) / self.grid.size

    def lattice_variance(self, eps: float, mollifier: Mollifier, index: int | None = None) -> float:
        m = self.model
        if index is None:
            index = len(m.schedule.levels) - 1
        lam = m.cumulative_spectrum(index)
        h = self.lattice_transfer(eps, mollifier)
        return _full_sum(lam * np.abs(h) ** 2, self.grid) / self.grid.size


def mollify_field(state: FieldState, eps: float, synth: TailSynthesizer, mollifier: Mollifier,
                  tail_noise_fft: np.ndarray | None = None, include_tail: bool = True) -> MollifiedField:
    """X_eps on the lattice: theta_eps convolved with X_T, plus the exact tail.

    ``tail_noise_fft`` is the rfft of a white-noise array shared by every eps
    and mollifier of one replicate, so the tail is one common continuum field.
    """
    grid = synth.grid
    if eps < 4.0 * grid.spacing:
        raise UnresolvableMollifier(f"UnresolvableMollifier: eps={eps:g} < 4*spacing={4 * grid.spacing:g}")
    t_cut = state.level
    if t_cut + 1e-12 < math.log(1.0 / eps) + 4.0:
        raise ValidationError(f"source level {t_cut} is below log(1/eps)+4 = {math.log(1 / eps) + 4:.4f}")
    if abs(t_cut - synth.t_cut) > 1e-12:
        raise ValidationError("mollify_field needs the top-level state of the synthesizer's model")
    transfer = synth.lattice_transfer(eps, mollifier)
    values = sfft.irfftn(sfft.rfftn(state.cumulative) * transfer, s=grid.shape) + state.x0
    tail_var = synth.tail_variance(eps, mollifier)
    lat_var = synth.lattice_variance(eps, mollifier)
    if include_tail:
        if tail_noise_fft is None:
            raise ValidationError("include_tail requires tail noise")
        values = values + sfft.irfftn(synth.tail_root(eps, mollifier) * tail_noise_fft, s=grid.shape)
        variance = lat_var + tail_var + state.k0
    else:
        if tail_var > TAIL_RULE:
            raise ValidationError(f"tail variance {tail_var:.3e} above {TAIL_RULE}; enable the tail")
        variance = lat_var + state.k0
    return MollifiedField(eps, values, t_cut, variance, tail_var, mollifier.name)
