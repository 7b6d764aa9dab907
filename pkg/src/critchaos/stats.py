"""Order-independent Monte Carlo summaries and gate verdicts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PASS, FAIL, INCONCLUSIVE, REPORT = "PASS", "FAIL", "INCONCLUSIVE", "REPORT"
GATE_Z = {"3se": 3.0, "5se": 5.0, "report-only": 3.0}


def fmean(x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    return math.fsum(x) / x.size


def mean_se(x):
    """Mean and standard error with compensated (permutation-invariant) sums."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("need at least two replicates")
    m = math.fsum(x) / n
    var = math.fsum((x - m) ** 2) / (n - 1)
    return m, math.sqrt(var / n)


@dataclass
class Criterion:
    cid: str
    label: str
    statistic: float
    target: float | None = None
    se: float | None = None
    verdict: str = REPORT
    gated: bool = True
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        parts = [f"[{self.verdict}]", self.cid, self.label, f"stat={self.statistic:.6g}"]
        if self.target is not None:
            parts.append(f"target={self.target:.6g}")
        if self.se is not None:
            parts.append(f"se={self.se:.3g}")
        if not self.gated:
            parts.append("(report)")
        return " ".join(parts)

    def as_dict(self) -> dict:
        return {
            "id": self.cid, "label": self.label, "statistic": _clean(self.statistic),
            "target": _clean(self.target), "se": _clean(self.se), "verdict": self.verdict,
            "gated": self.gated, "details": {k: _clean(v) for k, v in sorted(self.details.items())},
        }


def _clean(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return float(f"{v:.12g}")
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def within(cid, label, samples, target, z, gated=True, **details) -> Criterion:
    """PASS if the sample mean lies within z standard errors of ``target``."""
    m, se = mean_se(samples)
    ok = abs(m - target) <= z * se
    return Criterion(cid, label, m, target, se, PASS if ok else FAIL, gated,
                     {"z": z, "n": len(samples), **details})


def paired_decrease(cid, label, larger, smaller, z, gated=True, **details) -> Criterion:
    """Verdict on E[larger] > E[smaller] from paired (common random number) draws.

    PASS when the paired difference is positive beyond z SE, FAIL when it is
    negative beyond z SE, INCONCLUSIVE otherwise.  The unpaired CI overlap is
    reported alongside.
    """
    a = np.asarray(larger, dtype=float)
    b = np.asarray(smaller, dtype=float)
    m, se = mean_se(a - b)
    if m - z * se > 0:
        verdict = PASS
    elif m + z * se < 0:
        verdict = FAIL
    else:
        verdict = INCONCLUSIVE
    ma, sa = mean_se(a)
    mb, sb = mean_se(b)
    overlap = (ma - z * sa) <= (mb + z * sb)
    return Criterion(cid, label, m, 0.0, se, verdict, gated,
                     {"z": z, "mean_first": ma, "se_first": sa, "mean_second": mb, "se_second": sb,
                      "unpaired_overlap": bool(overlap), **details})


def bound(cid, label, value, limit, gated=True, upper=True, **details) -> Criterion:
    ok = value <= limit if upper else value >= limit
    return Criterion(cid, label, float(value), float(limit), None, PASS if ok else FAIL, gated, dict(details))


def report(cid, label, value, **details) -> Criterion:
    return Criterion(cid, label, float(value), None, None, REPORT, False, dict(details))


def overall(criteria) -> str:
    gated = [c.verdict for c in criteria if c.gated]
    if FAIL in gated:
        return FAIL
    if INCONCLUSIVE in gated:
        return INCONCLUSIVE
    return PASS
