"""Measure families built from field snapshots.

Weights live on the cells of the observation window ``[0, 1]^d``.  Exponent
normalization uses the realized discrete variance of the sampled field, so
``E[W] = 1`` holds exactly at every resolution.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

FAMILIES = ("M_alpha", "M_crit", "D", "M_eps")


@dataclass(frozen=True)
class SetSpec:
    """Union of grid-aligned boxes inside the unit window.

    Each box is a tuple of per-axis ``(lo, hi)`` pairs in physical units.
    """

    boxes: tuple
    name: str = "E"

    @classmethod
    def window(cls, dim: int) -> "SetSpec":
        return cls((((0.0, 1.0),) * dim,), "window")

    @classmethod
    def cube(cls, side: float, dim: int, origin: float = 0.0, name: str | None = None) -> "SetSpec":
        box = ((origin, origin + side),) * dim
        return cls((box,), name or f"cube_{side:g}")

    @classmethod
    def dyadic(cls, k: int, dim: int) -> "SetSpec":
        return cls.cube(2.0 ** -k, dim, name=f"dyadic_{k}")

    def cell_ranges(self, spacing: float, window_points: int):
        out = []
        for box in self.boxes:
            rng = []
            for lo, hi in box:
                a, b = lo / spacing, hi / spacing
                if abs(a - round(a)) > 1e-9 or abs(b - round(b)) > 1e-9:
                    raise ValidationError(f"set {self.name} is not aligned to spacing {spacing}")
                a, b = int(round(a)), int(round(b))
                if not 0 <= a <= b <= window_points:
                    raise ValidationError(f"set {self.name} leaves the observation window")
                rng.append((a, b))
            out.append(tuple(rng))
        return out

    def mask(self, spacing: float, window_points: int, dim: int) -> np.ndarray:
        m = np.zeros((window_points,) * dim, dtype=bool)
        for rng in self.cell_ranges(spacing, window_points):
            m[tuple(slice(a, b) for a, b in rng)] = True
        return m

    def lebesgue(self, spacing: float, window_points: int, dim: int) -> float:
        return int(self.mask(spacing, window_points, dim).sum()) * spacing ** dim

    def diameter(self, spacing: float, window_points: int) -> float:
        ranges = [r for r in self.cell_ranges(spacing, window_points) if all(b > a for a, b in r)]
        if not ranges:
            return 0.0
        best = 0.0
        for r1, r2 in itertools.product(ranges, repeat=2):
            sq = sum(max(b2 - a1, b1 - a2) ** 2 for (a1, b1), (a2, b2) in zip(r1, r2))
            best = max(best, sq)
        return math.sqrt(best) * spacing


@dataclass
class MeasureWeights:
    """Per-cell weight fields on the observation window."""

    alpha: float
    q: float
    level: float
    normalization_variance: float
    W_alpha: np.ndarray
    W_q: np.ndarray
    Z_q: np.ndarray | None
    D_density: np.ndarray | None
    spacing: float
    dim: int
    tag: str = "t"


def phi_modulus(u):
    """Gauge ``loglog(1/u) log(1/u)^{-1/4}`` for u <= e^{-e}, else e^{-1/4}."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("phi_modulus needs u > 0")
    small = u <= math.exp(-math.e)
    out = np.full(u.shape, math.exp(-0.25))
    lg = np.log(1.0 / u[small])
    out[small] = np.log(lg) * lg ** -0.25
    return out if out.ndim else float(out)


def varphi(u, dim: int):
    """Second-moment gauge ``u^d (1 v log(1/u))^{1/2}``."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise ValueError("varphi needs u > 0")
    out = u ** dim * np.sqrt(np.maximum(1.0, np.log(1.0 / u)))
    return out if out.ndim else float(out)


def _window(arr: np.ndarray, window_points: int, dim: int) -> np.ndarray:
    return arr[(slice(0, window_points),) * dim]


def weight_fields(state, alpha: float, q: float, spacing: float, window_points: int | None = None,
                  values: np.ndarray | None = None, variance: float | None = None,
                  barrier: np.ndarray | None = None) -> MeasureWeights:
    """Weight fields of a snapshot restricted to the window.

    ``values``/``variance``/``barrier`` override the snapshot for mollified
    fields: W_eps^(q) uses X_eps with the barrier of the level-t_eps snapshot.
    """
    dim = state.cumulative.ndim
    crit = math.sqrt(2.0 * dim)
    if not 0 < alpha <= crit + 1e-15:
        raise ValidationError(f"alpha must lie in (0, {crit:.6f}], got {alpha}")
    if q < 0:
        raise ValidationError(f"q must be nonnegative, got {q}")
    wp = window_points if window_points is not None else int(round(1.0 / spacing))
    X = _window(state.total if values is None else values, wp, dim)
    V = state.total_variance if variance is None else variance
    bmax = _window(state.barrier_max if barrier is None else barrier, wp, dim)
    W = np.exp(alpha * X - 0.5 * alpha * alpha * V)
    inside = bmax < q
    Wq = np.where(inside, W, 0.0)
    Z = None
    D = None
    if values is None and abs(alpha - crit) < 1e-15:
        bar = _window(state.cumulative, wp, dim)
        Z = (crit * state.level + q - bar) * Wq
        D = (crit * V - X) * W
    return MeasureWeights(alpha, q, state.level, V, W, Wq, Z, D, spacing, dim,
                          "t" if values is None else "eps")


def derivative_density(state, alpha: float, spacing: float, window_points: int | None = None):
    """(alpha V - X) W^alpha, the exact -d/dalpha of the density at ``alpha``."""
    dim = state.cumulative.ndim
    wp = window_points if window_points is not None else int(round(1.0 / spacing))
    X = _window(state.total, wp, dim)
    V = state.total_variance
    return (alpha * V - X) * np.exp(alpha * X - 0.5 * alpha * alpha * V)


def cell_sum(density: np.ndarray, mask: np.ndarray | None, spacing: float) -> float:
    vals = density if mask is None else density[mask]
    return math.fsum(vals.ravel()) * spacing ** density.ndim


def integrate(weights: MeasureWeights, E: SetSpec | None, family: str, truncated: bool = True) -> float:
    """Riemann sum of the chosen family over the cells of ``E``."""
    if family not in FAMILIES:
        raise ValidationError(f"unknown family {family!r}; choose from {FAMILIES}")
    wp = weights.W_alpha.shape[0]
    mask = None
    if E is not None:
        mask = E.mask(weights.spacing, wp, weights.dim)
        if not mask.any():
            return 0.0
    if family == "D":
        dens = weights.Z_q if truncated else weights.D_density
        if dens is None:
            raise ValidationError("D needs critical weights of a martingale snapshot")
    else:
        dens = weights.W_q if truncated else weights.W_alpha
    return cell_sum(dens, mask, weights.spacing)


def renormalize(value: float, family: str, t: float | None = None, eps: float | None = None,
                alpha: float | None = None, dim: int = 1) -> float:
    if family == "D":
        return value
    if family == "M_crit":
        if t is None:
            raise ValidationError("M_crit renormalization needs t")
        return value * math.sqrt(math.pi * t / 2.0)
    if family == "M_eps":
        if eps is None or not 0 < eps < 1:
            raise ValidationError("M_eps renormalization needs eps in (0, 1)")
        return value * math.sqrt(math.pi * math.log(1.0 / eps) / 2.0)
    if family == "M_alpha":
        crit = math.sqrt(2.0 * dim)
        if alpha is None or alpha >= crit:
            raise ValidationError(f"M_alpha renormalization needs alpha < {crit:.6f}")
        return value / (crit - alpha)
    raise ValidationError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# Levy-Prokhorov diagnostic
# ---------------------------------------------------------------------------

def _max_excess_1d(mu: np.ndarray, nu: np.ndarray, k: int) -> float:
    """max over cell sets A of mu(A) - nu(A^k), with A^k the k-cell enlargement.

    Exact dynamic program: the state is the distance (capped at 2k+1) from
    the current cell back to the last chosen cell; cell i-k is finalized at
    step i and is covered iff that distance is at most 2k.
    """
    n = mu.size
    cap = 2 * k + 1
    neg = -np.inf
    val = np.full(cap + 1, neg)
    val[cap] = 0.0
    for i in range(n + k):
        new = np.full(cap + 1, neg)
        # not chosen: state s -> min(s + 1, cap)
        new[1:cap] = val[0:cap - 1]
        new[cap] = max(val[cap - 1], val[cap])
        if i < n:
            new[0] = val.max() + mu[i]
        j = i - k
        if 0 <= j < n:
            new[:cap] -= nu[j]
        val = new
    return float(val.max())


def _max_excess_boxes(mu: np.ndarray, nu: np.ndarray, k: int) -> float:
    """Same excess restricted to dyadic boxes (d=2 lower bound)."""
    n = mu.shape[0]
    cmu = np.pad(mu.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    cnu = np.pad(nu.cumsum(0).cumsum(1), ((1, 0), (1, 0)))

    def box(c, a0, b0, a1, b1):
        return c[b0, b1] - c[a0, b1] - c[b0, a1] + c[a0, a1]

    best = 0.0
    size = n
    while size >= 1:
        for i in range(0, n, size):
            for j in range(0, n, size):
                inner = box(cmu, i, i + size, j, j + size)
                outer = box(cnu, max(i - k, 0), min(i + size + k, n), max(j - k, 0), min(j + size + k, n))
                best = max(best, inner - outer)
        size //= 2
    return best


def levy_prokhorov_approx(mu: np.ndarray, nu: np.ndarray, spacing: float) -> float:
    """Grid Levy-Prokhorov distance between two cell measures (diagnostic).

    d=1 searches every union of cells exactly; d=2 restricts the test sets to
    dyadic boxes, which bounds the distance from below.  Returns the smallest
    admissible multiple of ``spacing``.
    """
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise ValidationError("measures must share a grid")
    if np.array_equal(mu, nu):
        return 0.0
    excess = _max_excess_1d if mu.ndim == 1 else _max_excess_boxes
    n = mu.shape[0]
    for k in range(0, n + 1):
        eps = k * spacing
        tol = 1e-12 * max(mu.sum(), nu.sum(), 1.0)
        if excess(mu, nu, k) <= eps + tol and excess(nu, mu, k) <= eps + tol:
            return eps
    return (n + 1) * spacing
