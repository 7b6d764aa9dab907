"""Deterministic covariance objects for almost star-scale invariant kernels.

The kernel is

    K(x, y) = k0 + int_0^inf (1 - eta1 exp(-eta2 s)) kappa(e^s (x - y)) ds

with ``kappa`` a smooth radial positive definite bump supported in the unit
ball.  Everything here is immutable once built and safe to share between
worker threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad_vec
from scipy.interpolate import PchipInterpolator
from scipy.special import j0

from .errors import UnresolvableMollifier

TABLE_NODES = 4096
QUAD_TOL = 1e-10
INFINITY = math.inf


@dataclass(frozen=True)
class StarScaleParams:
    eta1: float = 0.0
    eta2: float = 1.0
    dim: int = 1
    k0_constant: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eta1 <= 1.0:
            raise ValueError(f"eta1 must lie in [0, 1], got {self.eta1}")
        if not self.eta2 > 0.0:
            raise ValueError(f"eta2 must be positive, got {self.eta2}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.k0_constant >= 0.0:
            raise ValueError(f"k0_constant must be nonnegative, got {self.k0_constant}")

    @property
    def critical_alpha(self) -> float:
        return math.sqrt(2.0 * self.dim)

    def weight(self, s):
        """Scale weight ``1 - eta1 exp(-eta2 s)`` of the layer at scale-time ``s``."""
        return 1.0 - self.eta1 * np.exp(-self.eta2 * np.asarray(s, dtype=float))


def solve_scale_time(t: float, params: StarScaleParams) -> float:
    """Return t' solving ``t' - (eta1/eta2)(1 - exp(-eta2 t')) = t``.

    The left side is strictly increasing in t' (derivative >= 1 - eta1 >= 0
    and > 0 for t' > 0), so bisection on [t, t + eta1/eta2] always brackets.
    """
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0.0 or params.eta1 == 0.0:
        return float(t)
    ratio = params.eta1 / params.eta2

    def f(tp):
        return tp - ratio * -math.expm1(-params.eta2 * tp) - t

    lo, hi = float(t), float(t) + ratio
    if f(hi) < 0:  # guards rounding at the upper end
        hi = math.nextafter(hi, math.inf)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 4 * math.ulp(hi):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# bump functions
# ---------------------------------------------------------------------------

def smooth_bump(r, sharpness: float = 1.0, radius: float = 1.0):
    """Unnormalized radial bump ``exp(-a / (1 - (r/R)^2))`` on ``r < R``."""
    r = np.asarray(r, dtype=float)
    x = r / radius
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-sharpness / (1.0 - x[inside] ** 2))
    return out


def _generator_bump(r):
    # psi: radial bump supported in B(0, 1/2)
    return smooth_bump(r, 1.0, 0.5)


def _self_convolution_1d(r, n_nodes=256):
    g, w = leggauss(n_nodes)
    lo = r - 0.5
    hi = np.full_like(r, 0.5)
    half = 0.5 * (hi - lo)
    z = half[:, None] * g + (0.5 * (hi + lo))[:, None]
    vals = _generator_bump(z) * _generator_bump(r[:, None] - z)
    return half * (vals @ w)


def _self_convolution_2d(r, n_rho=96, n_phi=96, chunk=256):
    g1, w1 = leggauss(n_rho)
    g2, w2 = leggauss(n_phi)
    out = np.empty_like(r)
    for start in range(0, r.size, chunk):
        rr = r[start:start + chunk][:, None]
        rho_lo = np.maximum(rr - 0.5, 0.0)
        rho = rho_lo + (0.5 - rho_lo) * 0.5 * (g1 + 1.0)
        jac_rho = 0.5 * (0.5 - rho_lo[:, 0])
        # |r e1 - z| < 1/2  <=>  cos(phi) > (r^2 + rho^2 - 1/4) / (2 r rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = (rr ** 2 + rho ** 2 - 0.25) / (2.0 * rr * rho)
        c = np.where(rr == 0.0, -1.0, c)
        phi_max = np.arccos(np.clip(c, -1.0, 1.0))
        phi = phi_max[..., None] * 0.5 * (g2 + 1.0)
        dist = np.sqrt(np.maximum(rr[..., None] ** 2 + rho[..., None] ** 2
                                  - 2.0 * rr[..., None] * rho[..., None] * np.cos(phi), 0.0))
        inner = (_generator_bump(dist) @ w2) * phi_max  # 2 * (phi_max / 2) * sum
        out[start:start + chunk] = (inner * _generator_bump(rho) * rho) @ w1 * jac_rho
    return out


@dataclass(frozen=True)
class BumpProfile:
    """Tabulated radial profile of kappa = (psi * psi) / (psi * psi)(0).

    ``psi`` is the standard smooth radial bump of radius 1/2, so kappa is
    supported in the closed unit ball, equals 1 at the origin, and has a
    nonnegative Fourier transform.
    """

    dim: int
    resolution: int
    nodes: np.ndarray = field(repr=False)
    radial_table: np.ndarray = field(repr=False)
    peak: float = field(repr=False)
    inner_profile: str = "psi(r) = exp(-1/(1-(2r)^2)) on r < 1/2"

    def __post_init__(self):
        object.__setattr__(self, "_interp", PchipInterpolator(self.nodes, self.radial_table, extrapolate=False))

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        out = np.zeros_like(r)
        inside = r < 1.0
        if np.any(inside):
            out[inside] = self._interp(r[inside])
        out[r == 0.0] = 1.0
        return np.clip(out, 0.0, 1.0)

    def fourier(self, xi):
        """Continuum Fourier transform of kappa (radial, real, >= 0)."""
        psi_hat = radial_fourier(_generator_bump, xi, self.dim, 0.5)
        return psi_hat ** 2 / self.peak


@lru_cache(maxsize=4)
def build_bump_profile(dim: int = 1, resolution: int = TABLE_NODES) -> BumpProfile:
    nodes = np.linspace(0.0, 1.0, resolution)
    conv = _self_convolution_1d(nodes) if dim == 1 else _self_convolution_2d(nodes)
    peak = float(conv[0])
    table = conv / peak
    table[0] = 1.0
    table[-1] = 0.0
    # quadrature noise at the flat tail must not break monotonicity
    table = np.minimum.accumulate(np.clip(table, 0.0, 1.0))
    return BumpProfile(dim=dim, resolution=resolution, nodes=nodes, radial_table=table, peak=peak)


def kappa(r, profile: BumpProfile):
    return profile(r)


def radial_fourier(func, xi, dim: int, radius: float, n_nodes: int = 512):
    """Fourier transform of a radial function supported in B(0, radius)."""
    xi = np.abs(np.asarray(xi, dtype=float))
    g, w = leggauss(n_nodes)
    rho = 0.5 * radius * (g + 1.0)
    w = 0.5 * radius * w
    f = func(rho)
    flat = xi.reshape(-1)
    out = np.empty_like(flat)
    for start in range(0, flat.size, 4096):
        x = flat[start:start + 4096, None] * rho
        if dim == 1:
            out[start:start + 4096] = 2.0 * (np.cos(x) * f) @ w
        else:
            out[start:start + 4096] = 2.0 * np.pi * (j0(x) * f * rho) @ w
    return out.reshape(xi.shape)


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mollifier:
    """Radial smooth bump of unit mass supported in B(0, 1)."""

    name: str = "standard"
    sharpness: float = 1.0
    dim: int = 1

    @property
    def mass(self) -> float:
        return _bump_mass(self.sharpness, self.dim)

    def __call__(self, r):
        return smooth_bump(r, self.sharpness) / self.mass

    def fourier(self, xi):
        return radial_fourier(lambda rho: self(rho), xi, self.dim, 1.0)

    def lattice_weights(self, eps: float, spacing: float) -> np.ndarray:
        """Lattice samples of theta_eps renormalized to unit sum.

        Returned array is centred: shape (2m+1,) for d=1, (2m+1, 2m+1) for d=2.
        """
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if eps < 4.0 * spacing:
            raise UnresolvableMollifier(
                f"UnresolvableMollifier: eps={eps:g} is below 4*spacing={4 * spacing:g}"
            )
        m = int(math.ceil(eps / spacing))
        offs = np.arange(-m, m + 1) * spacing
        if self.dim == 1:
            w = smooth_bump(offs / eps, self.sharpness)
        else:
            rr = np.hypot(offs[:, None], offs[None, :])
            w = smooth_bump(rr / eps, self.sharpness)
        return w / w.sum()


@lru_cache(maxsize=16)
def _bump_mass(sharpness: float, dim: int) -> float:
    g, w = leggauss(400)
    rho = 0.5 * (g + 1.0)
    f = smooth_bump(rho, sharpness)
    if dim == 1:
        return float(2.0 * 0.5 * (f @ w))
    return float(2.0 * np.pi * 0.5 * ((f * rho) @ w))


STANDARD_MOLLIFIER = Mollifier("standard", 1.0)
NARROW_MOLLIFIER = Mollifier("narrow", 4.0)


def mollifier_by_name(name: str, dim: int) -> Mollifier:
    table = {"standard": 1.0, "narrow": 4.0}
    if name not in table:
        raise ValueError(f"unknown mollifier {name!r}; choose from {sorted(table)}")
    return Mollifier(name, table[name], dim)


# ---------------------------------------------------------------------------
# covariances
# ---------------------------------------------------------------------------

def slab_covariance(s0: float, s1: float, r, params: StarScaleParams, profile: BumpProfile):
    """Covariance of the layer between scale levels s0 <= s1 at distance ``r``.

    Equals ``Kbar_{s1}(r) - Kbar_{s0}(r)``, integrated over scale-time
    ``[s0', min(s1', log(1/r))]`` with adaptive Gauss-Kronrod panels.
    """
    if s1 < s0:
        raise ValueError(f"slab requires s0 <= s1, got s0={s0}, s1={s1}")
    if s0 < 0:
        raise ValueError(f"s0 must be nonnegative, got {s0}")
    r = np.abs(np.asarray(r, dtype=float))
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    out = np.zeros_like(r)
    a = solve_scale_time(s0, params)
    b = solve_scale_time(s1, params)
    out[r == 0.0] = s1 - s0
    pos = r > 0.0
    with np.errstate(divide="ignore"):
        upper = np.where(pos, np.minimum(b, -np.log(np.where(pos, r, 1.0))), a)
    live = pos & (upper > a)
    if np.any(live) and b > a:
        rl = r[live]
        width = upper[live] - a

        def integrand(u):
            s = a + width * u
            return width * params.weight(s) * profile(np.exp(s) * rl)

        val, _ = quad_vec(integrand, 0.0, 1.0, epsabs=QUAD_TOL, epsrel=0.0, norm="max", limit=2000)
        out[live] = np.maximum(val, 0.0)
    return float(out[0]) if scalar else out


def kbar_t(t: float, r, params: StarScaleParams, profile: BumpProfile):
    if t == INFINITY:
        raise ValueError("kbar_t needs a finite t")
    return slab_covariance(0.0, t, r, params, profile)


def k_t(t: float, r, params: StarScaleParams, profile: BumpProfile):
    """K_t(r) = k0 + Kbar_t(r)."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return params.k0_constant + kbar_t(t, r, params, profile)


def log_envelope(t, r, eps: float = 0.0):
    """``t ∧ log_+ 1/(r ∨ eps)``."""
    r = np.maximum(np.abs(np.asarray(r, dtype=float)), eps)
    with np.errstate(divide="ignore"):
        lg = np.where(r > 0, np.maximum(-np.log(np.where(r > 0, r, 1.0)), 0.0), np.inf)
    return np.minimum(t, lg)


@dataclass(frozen=True)
class CovarianceTable:
    """Radial covariance tabulated on ``TABLE_NODES`` nodes with PCHIP interpolation."""

    kind: str
    params: tuple
    nodes: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    support: float = 1.0
    quadrature_tol: float = QUAD_TOL

    def __post_init__(self):
        object.__setattr__(self, "_interp", PchipInterpolator(self.nodes, self.values, extrapolate=False))

    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        out = np.zeros_like(r)
        inside = r <= self.support
        if np.any(inside):
            out[inside] = self._interp(r[inside])
        out[r == 0.0] = self.values[0]
        return out

    def to_csv(self, path) -> None:
        data = np.column_stack([self.nodes, self.values])
        np.savetxt(path, data, delimiter=",", header="r,value", comments="", fmt="%.17g")


def slab_table(s0: float, s1: float, params: StarScaleParams, profile: BumpProfile,
               resolution: int = TABLE_NODES) -> CovarianceTable:
    support = math.exp(-solve_scale_time(s0, params))
    nodes = np.linspace(0.0, support, resolution)
    values = slab_covariance(s0, s1, nodes, params, profile)
    values[0] = s1 - s0
    values[-1] = 0.0
    kind = "kbar_t" if s0 == 0.0 else "slab"
    return CovarianceTable(kind, (s0, s1), nodes, values, support)


def kbar_table(t: float, params: StarScaleParams, profile: BumpProfile) -> CovarianceTable:
    return slab_table(0.0, t, params, profile)


# ---------------------------------------------------------------------------
# lattice (self-consistent) mollified covariances
# ---------------------------------------------------------------------------

def mollified_tail_spectrum(xi, t_cut: float, eps: float, params: StarScaleParams,
                            profile: BumpProfile, mollifier: Mollifier, n_nodes: int = 48):
    """Spectral density of the mollified layers above scale ``t_cut``.

    ``|theta_hat(eps xi)|^2 * int_{t_cut'}^inf w(s) e^{-ds} kappa_hat(e^{-s} xi) ds``
    """
    d = params.dim
    xi = np.abs(np.asarray(xi, dtype=float))
    a = solve_scale_time(t_cut, params)
    theta_hat = mollifier.fourier(eps * xi)
    out = np.zeros_like(xi)
    kap0 = float(profile.fourier(np.array([0.0]))[0])
    zero = xi == 0.0
    base = math.exp(-d * a) / d - params.eta1 * math.exp(-(d + params.eta2) * a) / (d + params.eta2)
    out[zero] = kap0 * base
    live = (~zero) & (theta_hat ** 2 > 1e-40)
    if np.any(live):
        x = xi[live]
        g, w = leggauss(n_nodes)
        top = math.exp(-a) * x
        u = 0.5 * top[:, None] * (g + 1.0)
        jac = 0.5 * top
        kh = profile.fourier(u)
        wt = 1.0 - params.eta1 * (u / x[:, None]) ** params.eta2
        integral = (wt * u ** (d - 1) * kh) @ w * jac
        out[live] = integral / x ** d
    return theta_hat ** 2 * out


def _radial_line_values(table_fn, r, offsets):
    return table_fn(np.abs(r + offsets))


def mollified_covariance(t, eps: float, r, kind: str, params: StarScaleParams, profile: BumpProfile,
                         spacing: float, mollifier: Mollifier | None = None, tail_from: float | None = None):
    """Covariance of lattice-mollified fields at offset ``r`` (along a lattice axis).

    kind ``kbar_cross``: E[X_{t,eps}(x) Xbar_t(x + r)], single convolution.
    kind ``k_eps``: E[X_{t,eps}(x) X_{t,eps}(x + r)], double convolution.
    ``t = INFINITY`` stands for the full field: the lattice part up to
    ``log(1/eps) + 4`` plus the exactly integrated mollified tail.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if kind not in ("k_eps", "kbar_cross"):
        raise ValueError(f"unknown kind {kind!r}")
    if mollifier is None:
        mollifier = Mollifier("standard", 1.0, params.dim)
    r = np.abs(np.asarray(r, dtype=float))
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    infinite = t == INFINITY
    if infinite and kind == "kbar_cross":
        raise ValueError("kbar_cross needs a finite t")
    t_lat = (math.log(1.0 / eps) + 4.0 if tail_from is None else tail_from) if infinite else float(t)
    w = mollifier.lattice_weights(eps, spacing)
    m = (w.shape[0] - 1) // 2
    if kind == "k_eps":
        if params.dim == 1:
            stencil = np.convolve(w, w[::-1])
        else:
            from scipy.signal import fftconvolve
            stencil = fftconvolve(w, w[::-1, ::-1])
        m = (stencil.shape[0] - 1) // 2
    else:
        stencil = w
    offs = np.arange(-m, m + 1) * spacing
    out = np.empty_like(r)
    for i, ri in enumerate(r):
        if params.dim == 1:
            dist = np.abs(ri + offs)
        else:
            dist = np.hypot(ri + offs[:, None], offs[None, :])
        vals = slab_covariance(0.0, t_lat, dist.ravel(), params, profile).reshape(dist.shape)
        out[i] = float(np.sum(stencil * vals))
    if kind == "k_eps":
        out += params.k0_constant
    if infinite and kind == "k_eps":
        out += _tail_covariance(r, t_lat, eps, params, profile, mollifier)
    return float(out[0]) if scalar else out


def _tail_covariance(r, t_cut, eps, params, profile, mollifier):
    # inverse radial Fourier transform of the tail spectrum
    d = params.dim
    xi_max = 80.0 / eps
    g, w = leggauss(2048)
    xi = 0.5 * xi_max * (g + 1.0)
    w = 0.5 * xi_max * w
    spec = mollified_tail_spectrum(xi, t_cut, eps, params, profile, mollifier)
    reach = 2.0 * eps + math.exp(-solve_scale_time(t_cut, params))
    out = np.zeros_like(r)
    for i, ri in enumerate(r):
        if ri >= reach:
            continue
        if d == 1:
            out[i] = (spec * np.cos(xi * ri)) @ w / math.pi
        else:
            out[i] = (spec * j0(xi * ri) * xi) @ w / (2.0 * math.pi)
    return out


def tail_variance(t_cut: float, eps: float, params: StarScaleParams, profile: BumpProfile,
                  mollifier: Mollifier | None = None) -> float:
    """Var(X_eps - X_{t_cut, eps}) from the continuum tail spectrum."""
    if mollifier is None:
        mollifier = Mollifier("standard", 1.0, params.dim)
    return float(_tail_covariance(np.array([0.0]), t_cut, eps, params, profile, mollifier)[0])
