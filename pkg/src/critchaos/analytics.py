"""Closed-form Brownian barrier probabilities and second-moment envelopes.

Two displayed formulas in the source differ from their own later use.  The
ones implemented here are the self-consistent versions:

* P[sup_{[0,t]} B <= a] = sqrt(2/(pi t)) g_t(a_+), not sqrt(2 pi / t) g_t(a_+);
* a Brownian bridge from a to b over time t avoids 0 with probability
  1 - exp(-2ab/t), bounded by 1 ^ (2ab/t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

ENVELOPE_KINDS = ("tek1", "tek2", "tek3", "tek4", "hiphip")


def gfun(t, a):
    """g_t(a) = int_0^{a_+} exp(-z^2 / 2t) dz."""
    t = np.asarray(t, dtype=float)
    a = np.maximum(np.asarray(a, dtype=float), 0.0)
    out = np.sqrt(np.pi * t / 2.0) * erf(a / np.sqrt(2.0 * t))
    return out if out.ndim else float(out)


def bm_max_cdf(t, a):
    """P[sup_{s <= t} B_s <= a] for standard Brownian motion started at 0."""
    if np.any(np.asarray(t) <= 0):
        raise ValueError("bm_max_cdf needs t > 0")
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    out = np.where(np.isinf(a) & (a > 0), 1.0, erf(np.maximum(a, 0.0) / np.sqrt(2.0 * t)))
    return out if out.ndim else float(out)


def bridge_stay_positive(a, b, t):
    """P[bridge from a to b over [0, t] stays positive], a, b >= 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("bridge endpoints must be nonnegative")
    if np.any(np.asarray(t) <= 0):
        raise ValueError("bridge duration must be positive")
    with np.errstate(invalid="ignore"):
        x = np.where((a == 0) | (b == 0), 0.0, 2.0 * a * b / t)
    out = -np.expm1(-x)
    return out if out.ndim else float(out)


def drift_line_stay_below(a, b):
    """P[B_t <= a t + b for all t > 0] = 1 - exp(-2ab)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b < 0):
        raise ValueError("drift_line_stay_below needs a > 0, b >= 0")
    with np.errstate(invalid="ignore"):
        x = np.where(b == 0, 0.0, 2.0 * a * b)
    out = -np.expm1(-x)
    return out if out.ndim else float(out)


def cameron_martin_mean(H, z0, z):
    """Mean of Y(z) after tilting the law by exp(Y(z0) - H(z0, z0)/2)."""
    return H(z, z0)


@dataclass(frozen=True)
class SeparationScales:
    w: float
    u: float
    v: float

    @classmethod
    def from_distance(cls, dist: float, t: float = math.inf, eps: float | None = None) -> "SeparationScales":
        d = min(dist, 1.0)
        w = math.inf if d == 0 else math.log(1.0 / d)
        u = min(w, t)
        v = min(w, math.log(1.0 / eps)) if eps is not None else w
        return cls(w, u, v)


def moment_envelope(kind: str, scales: SeparationScales, C: float = 1.0, t: float | None = None,
                    eps: float | None = None, alpha: float | None = None, dim: int = 1,
                    size: float | None = None) -> float:
    """Right-hand side of the pair-moment bounds with constant ``C``.

    ``hiphip`` ignores ``scales`` and evaluates C * varphi(size).
    """
    if kind not in ENVELOPE_KINDS:
        raise ValueError(f"unknown envelope {kind!r}; choose from {ENVELOPE_KINDS}")
    d = dim
    if kind == "tek1":
        if t is None:
            raise ValueError("tek1 needs t")
        u = scales.u
        return C * math.exp(d * u) * (u + 1.0) ** -1.5 / (t - u + 1.0)
    if kind == "tek2":
        if eps is None:
            raise ValueError("tek2 needs eps")
        v = scales.v
        te = math.log(1.0 / eps)
        return C * math.exp(d * v) * (v + 1.0) ** -1.5 / (te - v + 1.0)
    if kind == "tek3":
        u = scales.u
        return C * math.exp(d * u) * (u + 1.0) ** -1.5
    if kind == "tek4":
        if alpha is None:
            raise ValueError("tek4 needs alpha")
        w = scales.w
        return C * (math.sqrt(2.0 * d) - alpha) ** 2 * math.exp(d * w) * (w + 1.0) ** -1.5
    if size is None or size <= 0:
        raise ValueError("hiphip needs a positive set size")
    return C * size ** d * math.sqrt(max(1.0, math.log(1.0 / size)))


def fit_envelope_constant(observed, envelope) -> float:
    """Smallest C with observed <= C * envelope over a lattice of points."""
    obs = np.asarray(observed, dtype=float)
    env = np.asarray(envelope, dtype=float)
    keep = env > 0
    return float(np.max(obs[keep] / env[keep])) if keep.any() else 0.0
