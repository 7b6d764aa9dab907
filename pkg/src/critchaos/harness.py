"""Seeded Monte Carlo campaigns and the experiments built on them.

A campaign samples N replicates of the multi-scale field once and hands every
replicate to a set of probes.  Each probe turns a replicate into a few named
scalars; after the campaign it converts the replicate table into criteria.
All paired comparisons therefore use identical fields.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import fft as sfft

from . import analytics as an
from .errors import ValidationError
from .kernel import StarScaleParams, kbar_table, log_envelope, mollifier_by_name, slab_covariance, solve_scale_time
from .measures import (SetSpec, cell_sum, derivative_density, integrate, phi_modulus, renormalize,
                       varphi, weight_fields)
from .sampler import (GridSpec, ScaleSchedule, TailSynthesizer, lattice_model, mollify_field,
                      replicate_rng, sample_layers)
from .stats import (FAIL, GATE_Z, INCONCLUSIVE, PASS, Criterion, bound, fmean, mean_se, overall,
                    paired_decrease, report, within)

EXPERIMENTS = (
    "field_statistics", "measure_identities", "derivative_convergence", "seneta_heyde",
    "mollified_convergence", "subcritical_limit", "formula_suite", "moment_and_gauge",
    "tail_diagnostic",
)


@dataclass(frozen=True)
class ExperimentConfig:
    experiments: tuple = ("measure_identities",)
    dim: int = 1
    points_per_side: int = 8192
    box_side: float = 2.0
    t_max: float = 8.0
    max_step: float = 0.05
    snapshots: tuple = (0.5, 1.0, 2.0, 4.0, 7.0, 8.0)
    eta1: float = 0.25
    eta2: float = 1.0
    k0_constant: float = 0.0
    q_list: tuple = (1.0, 2.0, 4.0)
    q_main: float = 2.0
    alpha_gaps: tuple = (0.5, 0.25, 0.125)
    eps_list: tuple = ()
    mollifiers: tuple = ("standard", "narrow")
    replicates: int = 2000
    seed: int = 20240917
    gate_policy: str = "3se"
    bridge: bool = True
    threads: int = 1
    gauge_t: float = 7.0
    gauge_q: float = 1.0
    gauge_levels: int = 7
    tail_q: tuple = (1, 2, 3, 4, 5, 6, 7, 8)
    formula_paths: int = 200000
    cm_replicates: int = 10000
    snapshot_format: str = "csv"
    simulate_replicates: int = 2
    sets: tuple = ()

    def __post_init__(self):
        unknown = [e for e in self.experiments if e not in EXPERIMENTS]
        if unknown:
            raise ValidationError(f"unknown experiment(s) {unknown}; choose from {EXPERIMENTS}")
        if self.replicates < 1:
            raise ValidationError("replicates must be positive")
        if self.gate_policy not in GATE_Z:
            raise ValidationError(f"gate_policy must be one of {sorted(GATE_Z)}")
        if self.snapshot_format not in ("csv", "npy"):
            raise ValidationError("snapshot_format must be csv or npy")
        if any(q < 0 for q in self.q_list) or self.q_main < 0:
            raise ValidationError("q values must be nonnegative")
        crit = math.sqrt(2.0 * self.dim)
        if any(not 0 < g < crit for g in self.alpha_gaps):
            raise ValidationError(f"alpha gaps must lie in (0, {crit:.4f})")
        self.params  # validates kernel parameters
        grid = self.grid
        for E in self.sets:
            E.cell_ranges(grid.spacing, grid.window_points)

    @property
    def params(self) -> StarScaleParams:
        try:
            return StarScaleParams(self.eta1, self.eta2, self.dim, self.k0_constant)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.dim, self.points_per_side, self.box_side)

    @property
    def z(self) -> float:
        return GATE_Z[self.gate_policy]

    @property
    def gated(self) -> bool:
        return self.gate_policy != "report-only"

    def schedule(self, t_max=None, snapshots=None) -> ScaleSchedule:
        t_max = self.t_max if t_max is None else t_max
        snaps = self.snapshots if snapshots is None else snapshots
        return ScaleSchedule.build(t_max, snaps, self.max_step)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def digest(self) -> str:
        body = {k: v for k, v in self.to_dict().items() if k != "threads"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    experiment: str
    config: dict
    manifest_hash: str
    keys: list
    raw: np.ndarray
    renormalized: np.ndarray
    criteria: list
    verdict: str
    wall_clock: float = 0.0
    extra_rows: list = field(default_factory=list)

    def column(self, key) -> np.ndarray:
        return self.raw[:, self.keys.index(key)]

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "manifest_hash": self.manifest_hash,
            "verdict": self.verdict,
            "replicates": int(self.raw.shape[0]),
            "criteria": [c.as_dict() for c in self.criteria],
        }

    def tidy_rows(self):
        header = ("replicate", "family", "parameter", "value", "q", "set", "raw", "renormalized")
        rows = [header]
        for j, key in enumerate(self.keys):
            fam, pname, pval, q, sname = key
            for r in range(self.raw.shape[0]):
                rows.append((r, fam, pname, _fmt(pval), _fmt(q), sname,
                             _fmt(self.raw[r, j]), _fmt(self.renormalized[r, j])))
        rows.extend(self.extra_rows)
        return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def key(family, pname="", pval=None, q=None, sname=""):
    return (family, pname, None if pval is None else float(pval), None if q is None else float(q), sname)


# ---------------------------------------------------------------------------
# campaign machinery
# ---------------------------------------------------------------------------

class ReplicateContext:
    """Per-replicate view shared by all probes, caching weight fields."""

    def __init__(self, replicate, snaps, model, config, synth=None):
        self.replicate = replicate
        self.snaps = snaps
        self.model = model
        self.config = config
        self.grid = model.grid
        self.h = model.grid.spacing
        self.wp = model.grid.window_points
        self.synth = synth
        self._w = {}
        self._moll = {}
        self._tail_fft = None

    def snap(self, level):
        for k, v in self.snaps.items():
            if abs(k - level) < 1e-9:
                return v
        raise KeyError(f"level {level} not among snapshots {sorted(self.snaps)}")

    def weights(self, level, alpha, q):
        k = (round(level, 9), alpha, q)
        if k not in self._w:
            self._w[k] = weight_fields(self.snap(level), alpha, q, self.h, self.wp)
        return self._w[k]

    def crit(self):
        return math.sqrt(2.0 * self.grid.dim)

    def tail_fft(self):
        if self._tail_fft is None:
            rng = replicate_rng(self.config.seed, self.replicate, 3)
            self._tail_fft = sfft.rfftn(rng.standard_normal(self.grid.shape))
        return self._tail_fft

    def mollified(self, eps, name):
        k = (eps, name)
        if k not in self._moll:
            moll = mollifier_by_name(name, self.grid.dim)
            top = self.snap(self.model.schedule.t_max)
            self._moll[k] = mollify_field(top, eps, self.synth, moll, self.tail_fft())
        return self._moll[k]


class Probe:
    name = "probe"

    def levels(self):
        return set()

    def observe(self, ctx) -> dict:
        raise NotImplementedError

    def finalize(self, table, config) -> list:
        raise NotImplementedError


class Table:
    def __init__(self, keys, raw, renorm):
        self.keys = keys
        self.raw = raw
        self.renorm = renorm
        self._index = {k: i for i, k in enumerate(keys)}

    def __call__(self, k, renormalized=False):
        arr = self.renorm if renormalized else self.raw
        return arr[:, self._index[k]]

    def has(self, k):
        return k in self._index


def run_campaign(config: ExperimentConfig, probes, grid=None, schedule=None, mollified=False):
    """Sample ``config.replicates`` replicates once and feed every probe.

    Returns a Table whose rows are replicates in index order; the result is
    independent of the thread count.
    """
    grid = grid or config.grid
    needed = set(config.snapshots)
    for p in probes:
        needed |= set(p.levels())
    t_max = config.t_max if schedule is None else schedule.t_max
    schedule = schedule or ScaleSchedule.build(t_max, sorted(s for s in needed if s <= t_max), config.max_step)
    model = lattice_model(grid, schedule, config.params)
    synth = TailSynthesizer(model) if mollified else None
    if synth is not None:
        # build spectra up front so worker threads only read them
        for eps in config.eps_list:
            for name in config.mollifiers:
                m = mollifier_by_name(name, grid.dim)
                synth.lattice_transfer(eps, m)
                synth.tail_root(eps, m)
    keep = set()
    for p in probes:
        keep |= set(p.levels())
    keep.add(schedule.t_max)

    def one(r):
        snaps = sample_layers(model, config.seed, r, config.bridge, keep=keep)
        ctx = ReplicateContext(r, snaps, model, config, synth)
        row = {}
        for p in probes:
            obs = p.observe(ctx)
            if r == 0:
                p._keys = list(obs)
            row.update(obs)
        return row

    n = config.replicates
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            rows = list(pool.map(one, range(n)))
    else:
        rows = [one(r) for r in range(n)]
    keys = list(rows[0].keys())
    raw = np.array([[row[k][0] for k in keys] for row in rows], dtype=float)
    ren = np.array([[row[k][1] for k in keys] for row in rows], dtype=float)
    return Table(keys, raw, ren), model


def _val(x, y=None):
    return (float(x), float(x if y is None else y))


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

class FieldStatistics(Probe):
    """Brownian marginal, finite-range independence and covariance fidelity."""

    name = "field_statistics"
    var_levels = (1.0, 2.0, 4.0, 8.0)
    s0 = 1.0

    def __init__(self, config):
        self.config = config
        grid = config.grid
        tops = [t for t in self.var_levels if t <= config.t_max]
        self.var_levels = tuple(tops)
        self.cov_level = tops[-1]
        h = grid.spacing
        wp = grid.window_points
        cells = np.unique(np.clip(np.round(np.geomspace(1, 0.9 * wp, 10)).astype(int), 1, wp - 1))
        self.cov_lags = tuple(int(c) for c in cells)
        sp = solve_scale_time(self.s0, config.params)
        first = int(math.ceil(math.exp(-sp) / h))
        self.range_lags = tuple(sorted({first, wp // 2, (3 * wp) // 4}))
        self.stat_lag = max(1, int(round(0.05 / h)))

    def levels(self):
        return set(self.var_levels) | {self.s0}

    def observe(self, ctx):
        out = {}
        d = ctx.grid.dim
        origin = (0,) * d

        def at(level, idx=origin):
            return ctx.snap(level).cumulative[idx]

        for t in self.var_levels:
            out[key("stat", "xbar_sq", t)] = _val(at(t) ** 2)
            whole = ctx.snap(t).cumulative[ctx.grid.window_slice()]
            out[key("stat", "xbar_sq_window", t)] = _val(np.mean(whole ** 2))
        marks = (0.0,) + self.var_levels
        incs = [at(b) - (at(a) if a > 0 else 0.0) for a, b in zip(marks[:-1], marks[1:])]
        for i in range(len(incs)):
            out[key("stat", "inc_sq", marks[i + 1])] = _val(incs[i] ** 2)
            for j in range(i + 1, len(incs)):
                out[key("stat", f"inc_prod_{i}_{j}", marks[j + 1])] = _val(incs[i] * incs[j])
        top = self.cov_level
        late = ctx.snap(top).cumulative - ctx.snap(self.s0).cumulative
        for lag in self.range_lags:
            idx = (lag,) + (0,) * (d - 1)
            out[key("stat", "range_prod", lag * ctx.h)] = _val(late[origin] * late[idx])
            out[key("stat", "range_sq", lag * ctx.h)] = _val(late[idx] ** 2)
        out[key("stat", "range_sq", 0.0)] = _val(late[origin] ** 2)
        field_t = ctx.snap(top).cumulative
        wsl = ctx.grid.window_slice()
        for lag in self.cov_lags:
            shifted = np.roll(field_t, -lag, axis=0)
            out[key("stat", "cov", lag * ctx.h)] = _val(np.mean(field_t[wsl] * shifted[wsl]))
        lag = self.stat_lag
        half = ctx.wp // 2
        a = field_t[origin] * field_t[(lag,) + (0,) * (d - 1)]
        b = field_t[(half,) + (0,) * (d - 1)] * field_t[(half + lag,) + (0,) * (d - 1)]
        out[key("stat", "stationarity_diff", lag * ctx.h)] = _val(a - b)
        return out

    def finalize(self, T, config):
        z = config.z
        params = config.params
        model = self.model
        crit = []
        for t in self.var_levels:
            idx = int(np.argmin(np.abs(np.asarray(model.schedule.levels) - t)))
            crit.append(within(f"C1.var.t{t:g}", f"Var Xbar_t(x) = t at t={t:g}",
                               T(key("stat", "xbar_sq", t)), model.level_variance(idx), z))
            m, se = mean_se(T(key("stat", "xbar_sq_window", t)))
            crit.append(report(f"C1.var_window.t{t:g}", f"window-averaged variance at t={t:g}", m, se=se))
        marks = (0.0,) + self.var_levels
        n = T.raw.shape[0]
        for i in range(len(marks) - 1):
            crit.append(within(f"C1.inc_var.{i}", f"increment variance over [{marks[i]:g},{marks[i + 1]:g}]",
                               T(key("stat", "inc_sq", marks[i + 1])), marks[i + 1] - marks[i], z))
            for j in range(i + 1, len(marks) - 1):
                c = within(f"C1.inc_indep.{i}{j}", f"disjoint increments {i},{j} uncorrelated",
                           T(key("stat", f"inc_prod_{i}_{j}", marks[j + 1])), 0.0, z)
                va = fmean(T(key("stat", "inc_sq", marks[i + 1])))
                vb = fmean(T(key("stat", "inc_sq", marks[j + 1])))
                c.details["correlation"] = c.statistic / math.sqrt(va * vb)
                c.details["corr_bound"] = z / math.sqrt(n)
                crit.append(c)
        sp = solve_scale_time(self.s0, params)
        for lag in self.range_lags:
            r = lag * model.grid.spacing
            c = within(f"C2.range.r{r:.4f}", f"slab increments beyond s0={self.s0:g} independent at lag {r:.4f}",
                       T(key("stat", "range_prod", r)), 0.0, z, support=math.exp(-sp))
            v0 = fmean(T(key("stat", "range_sq", 0.0)))
            v1 = fmean(T(key("stat", "range_sq", r)))
            c.details["correlation"] = c.statistic / math.sqrt(v0 * v1)
            c.details["analytic_cov"] = float(slab_covariance(self.s0, self.cov_level, r, params, model.profile))
            crit.append(c)
        top = self.cov_level
        lattice_cov = model.covariance_at(len(model.schedule.levels) - 1 if top == model.schedule.t_max
                                          else int(np.argmin(np.abs(np.asarray(model.schedule.levels) - top))))
        table = kbar_table(top, params, model.profile)
        for lag in self.cov_lags:
            r = lag * model.grid.spacing
            target = float(table(np.array([r]))[0])
            c = within(f"C3.cov.r{r:.5f}", f"Cov(Xbar_t(x), Xbar_t(x+r)) = Kbar_t(r), t={top:g}",
                       T(key("stat", "cov", r)), target, z,
                       lattice_value=float(lattice_cov.ravel()[lag]))
            crit.append(c)
        worst = -np.inf
        for t in self.var_levels:
            tab = kbar_table(t, params, model.profile)
            env = log_envelope(t, tab.nodes)
            worst = max(worst, float(np.max(tab.values - env)))
        crit.append(bound("C3.steak", "Kbar_t(r) <= t ^ log+(1/r) at all table nodes", worst, 0.0))
        crit.append(within("C3.stationarity", "same-lag covariance independent of base point",
                           T(key("stat", "stationarity_diff", self.stat_lag * model.grid.spacing)), 0.0, z))
        return crit


class MeasureIdentities(Probe):
    """Martingale mean, one-point identity, normalization and derivative identity."""

    name = "measure_identities"
    mean_levels = (1.0, 2.0, 4.0)
    point_level = 4.0
    deriv_levels = (1.0, 2.0, 4.0, 8.0)
    fd_step = 1e-4

    def __init__(self, config):
        self.config = config
        self.mean_levels = tuple(t for t in self.mean_levels if t <= config.t_max)
        self.deriv_levels = tuple(t for t in self.deriv_levels if t <= config.t_max)
        self.point_level = min(self.point_level, config.t_max)
        self.quarter = SetSpec.cube(0.25, config.dim, name="quarter")
        self.window = SetSpec.window(config.dim)

    def levels(self):
        return set(self.mean_levels) | set(self.deriv_levels) | {self.point_level}

    def observe(self, ctx):
        out = {}
        crit = ctx.crit()
        d = ctx.grid.dim
        origin = (0,) * d
        for t in self.mean_levels:
            for q in self.config.q_list:
                w = ctx.weights(t, crit, q)
                out[key("D", "t", t, q, "window")] = _val(integrate(w, None, "D"))
            w = ctx.weights(t, crit, self.config.q_main)
            out[key("D_untruncated", "t", t, None, "window")] = _val(integrate(w, None, "D", truncated=False))
            snap = ctx.snap(t)
            window_max = float(snap.barrier_max[ctx.grid.window_slice()].max())
            qs = sorted(self.config.q_list)
            vals = [integrate(ctx.weights(t, crit, q), None, "M_crit") for q in qs]
            mono = all(b >= a for a, b in zip(vals[:-1], vals[1:]))
            full = integrate(ctx.weights(t, crit, qs[0]), None, "M_crit", truncated=False)
            coinc = all((window_max >= q) or vals[i] == full for i, q in enumerate(qs))
            out[key("check", "q_monotone", t)] = _val(float(mono))
            out[key("check", "coincidence", t)] = _val(float(coinc))
        t = self.point_level
        q = self.config.q_main
        w = ctx.weights(t, crit, q)
        out[key("W_q_point", "t", t, q, "origin")] = _val(w.W_q[origin])
        out[key("M_crit", "t", t, q, "window")] = _val(integrate(w, None, "M_crit"),
                                                      renormalize(integrate(w, None, "M_crit"), "M_crit", t=t))
        for E in self.config.sets:
            out[key("D", "t", t, q, E.name)] = _val(integrate(w, E, "D"))
        wa = ctx.weights(t, 1.0, q)
        out[key("M_alpha_untruncated", "alpha", 1.0, None, "quarter")] = _val(
            integrate(wa, self.quarter, "M_alpha", truncated=False))
        for t in self.deriv_levels:
            snap = ctx.snap(t)
            wc = ctx.weights(t, crit, q)
            D = integrate(wc, None, "D", truncated=False)
            hs = ctx.h
            plus = cell_sum(weight_fields(snap, crit - self.fd_step, q, hs, ctx.wp).W_alpha, None, hs)
            # alpha beyond sqrt(2d) is only used inside the difference quotient
            X = snap.total[ctx.grid.window_slice()]
            V = snap.total_variance
            a2 = crit + self.fd_step
            minus = cell_sum(np.exp(a2 * X - 0.5 * a2 * a2 * V), None, hs)
            fd = (plus - minus) / (2.0 * self.fd_step)
            scale = max(abs(D), cell_sum(np.abs(wc.D_density), None, hs))
            out[key("deriv_relerr", "t", t)] = _val(abs(fd - D) / scale)
        return out

    def finalize(self, T, config):
        z = config.z
        crit = []
        for t in self.mean_levels:
            for q in config.q_list:
                crit.append(within(f"C5.mean.t{t:g}.q{q:g}", f"E[D_t^(q)([0,1])] = q at t={t:g}, q={q:g}",
                                   T(key("D", "t", t, q, "window")), q, z))
            m, se = mean_se(T(key("D_untruncated", "t", t, None, "window")))
            crit.append(report(f"C5.untruncated.t{t:g}", f"E[D_t([0,1])] at t={t:g}", m, se=se))
            crit.append(bound(f"M.q_monotone.t{t:g}", "M_t^(q)(E) nondecreasing in q on every replicate",
                              float(np.min(T(key("check", "q_monotone", t)))), 1.0, upper=False))
            crit.append(bound(f"M.coincidence.t{t:g}", "M_t^(q) = M_t when the window barrier stays below q",
                              float(np.min(T(key("check", "coincidence", t)))), 1.0, upper=False))
        t, q = self.point_level, config.q_main
        target = float(an.bm_max_cdf(t, q))
        crit.append(within("C6.window", f"E[W_t^(q)] = sqrt(2/(pi t)) g_t(q), window average, t={t:g}, q={q:g}",
                           T(key("M_crit", "t", t, q, "window")), target, z))
        c = within("C6.point", "E[W_t^(q)(x)] at a single point", T(key("W_q_point", "t", t, q, "origin")),
                   target, z, gated=False)
        crit.append(c)
        grid = config.grid
        for E in config.sets:
            lam = E.lebesgue(grid.spacing, grid.window_points, config.dim)
            crit.append(within(f"C5.set.{E.name}", f"E[D_t^(q)(E)] = q lambda(E) for set {E.name}",
                               T(key("D", "t", t, q, E.name)), q * lam, z))
        crit.append(within("M.normalization", "E[M_t^alpha(E)] = |E| for alpha=1, E=[0,1/4]^d",
                           T(key("M_alpha_untruncated", "alpha", 1.0, None, "quarter")),
                           0.25 ** config.dim, z))
        worst = max(float(np.max(T(key("deriv_relerr", "t", t)))) for t in self.deriv_levels)
        crit.append(bound("C7.derivative", "central difference of M^alpha matches D_t per replicate", worst, 1e-6))
        return crit


class DerivativeConvergence(Probe):
    name = "derivative_convergence"
    ladder = (1.0, 2.0, 4.0, 8.0)

    def __init__(self, config):
        self.config = config
        self.ladder = tuple(t for t in self.ladder if t <= config.t_max)

    def levels(self):
        return set(self.ladder)

    def observe(self, ctx):
        q = self.config.q_main
        crit = ctx.crit()
        out = {}
        for t in self.ladder:
            out[key("D", "t", t, q, "window")] = _val(integrate(ctx.weights(t, crit, q), None, "D"))
        return out

    def finalize(self, T, config):
        q, z = config.q_main, config.z
        crit = []
        Ds = [T(key("D", "t", t, q, "window")) for t in self.ladder]
        for t, D in zip(self.ladder, Ds):
            crit.append(within(f"DC.mean.t{t:g}", f"E[D_t^(q)] = q lambda(E) at t={t:g}", D, q, z))
        gaps = [(b - a) ** 2 for a, b in zip(Ds[:-1], Ds[1:])]
        for i in range(len(gaps)):
            m, se = mean_se(gaps[i])
            crit.append(report(f"DC.gap.{self.ladder[i]:g}-{self.ladder[i + 1]:g}",
                               f"E[(D_{self.ladder[i + 1]:g} - D_{self.ladder[i]:g})^2]", m, se=se))
        for i in range(len(gaps) - 1):
            crit.append(paired_decrease(f"DC.decrease.{i}", f"gap {self.ladder[i]:g}->{self.ladder[i + 1]:g} exceeds "
                                        f"gap {self.ladder[i + 1]:g}->{self.ladder[i + 2]:g}", gaps[i], gaps[i + 1], z))
        return crit


class SenetaHeyde(Probe):
    name = "seneta_heyde"
    ladder = (2.0, 4.0, 8.0)
    base = 2.0

    def __init__(self, config):
        self.config = config
        self.ladder = tuple(t for t in self.ladder if t <= config.t_max)

    def levels(self):
        return set(self.ladder) | {self.base}

    def observe(self, ctx):
        q = self.config.q_main
        crit = ctx.crit()
        out = {}
        for t in self.ladder:
            w = ctx.weights(t, crit, q)
            M = integrate(w, None, "M_crit")
            out[key("M_crit", "t", t, q, "window")] = _val(M, renormalize(M, "M_crit", t=t))
            out[key("D", "t", t, q, "window")] = _val(integrate(w, None, "D"))
        s = self.base
        ws = ctx.weights(s, crit, q)
        snap = ctx.snap(s)
        b = crit * s + q - snap.cumulative[ctx.grid.window_slice()]
        for t in self.ladder:
            if t <= s:
                continue
            proj = cell_sum(ws.W_q * an.gfun(t - s, b), None, ctx.h)
            M = integrate(ctx.weights(t, crit, q), None, "M_crit")
            out[key("projection_gap", "t", t, q, f"s{s:g}")] = _val(math.sqrt(math.pi * (t - s) / 2.0) * M - proj)
        return out

    def finalize(self, T, config):
        q, z = config.q_main, config.z
        crit = []
        gaps = []
        for t in self.ladder:
            renM = T(key("M_crit", "t", t, q, "window"), renormalized=True)
            D = T(key("D", "t", t, q, "window"))
            gaps.append((renM - D) ** 2)
            m, se = mean_se(gaps[-1])
            crit.append(report(f"C8.gap.t{t:g}", f"E[(sqrt(pi t/2) M_t^(q) - D_t^(q))^2] at t={t:g}", m, se=se))
            crit.append(within(f"SH.mean.t{t:g}", f"E[sqrt(pi t/2) M_t^(q)] = g_t(q) at t={t:g}", renM,
                               float(an.gfun(t, q)), z, below_q=float(an.gfun(t, q)) < q))
        for i in range(len(gaps) - 1):
            crit.append(paired_decrease(f"C8.decrease.{i}", f"Seneta-Heyde gap decreases t={self.ladder[i]:g}->"
                                        f"{self.ladder[i + 1]:g}", gaps[i], gaps[i + 1], z))
        for t in self.ladder:
            if t > self.base:
                crit.append(within(f"SH.projection.t{t:g}", f"E[sqrt(pi(t-s)/2) M_t^(q) | F_s] identity, "
                                   f"s={self.base:g}, t={t:g}",
                                   T(key("projection_gap", "t", t, q, f"s{self.base:g}")), 0.0, z))
        return crit


class SubcriticalLimit(Probe):
    """(sqrt(2d) - alpha)^{-1} M^alpha against 2 D^(q).

    The gated statistic uses the conditional expectation of the t -> infinity
    limit given the field at the top level T:

        E[M_inf^{alpha,(q)}(x) | F_T] = W_T^{alpha,(q)}(x) (1 - exp(-2 beta b_T(x)))

    with beta = sqrt(2d) - alpha and b_T = q + sqrt(2d) T - Xbar_T.  The raw
    finite-T ratio is reported as well.
    """

    name = "subcritical_limit"

    def __init__(self, config):
        self.config = config
        self.top = config.t_max

    def levels(self):
        return {self.top}

    def observe(self, ctx):
        q = self.config.q_main
        crit = ctx.crit()
        t = self.top
        out = {}
        wc = ctx.weights(t, crit, q)
        out[key("D", "t", t, q, "window")] = _val(integrate(wc, None, "D"))
        snap = ctx.snap(t)
        b = crit * t + q - snap.cumulative[ctx.grid.window_slice()]
        for beta in self.config.alpha_gaps:
            alpha = crit - beta
            w = ctx.weights(t, alpha, q)
            raw = integrate(w, None, "M_alpha")
            out[key("M_alpha", "gap", beta, q, "window")] = _val(raw, renormalize(raw, "M_alpha", alpha=alpha,
                                                                                  dim=ctx.grid.dim))
            proj = cell_sum(w.W_q * -np.expm1(-2.0 * beta * b), None, ctx.h)
            out[key("M_alpha_projected", "gap", beta, q, "window")] = _val(proj, proj / beta)
        return out

    def finalize(self, T, config):
        q, z, t = config.q_main, config.z, self.top
        D2 = 2.0 * T(key("D", "t", t, q, "window"))
        betas = sorted(config.alpha_gaps, reverse=True)
        crit = []
        proj_gaps, raw_gaps = [], []
        for beta in betas:
            pg = (T(key("M_alpha_projected", "gap", beta, q, "window"), True) - D2) ** 2
            rg = (T(key("M_alpha", "gap", beta, q, "window"), True) - D2) ** 2
            proj_gaps.append(pg)
            raw_gaps.append(rg)
            m, se = mean_se(pg)
            crit.append(report(f"C10.gap.b{beta:g}", f"projected gap at sqrt(2d)-alpha={beta:g}", m, se=se))
            m, se = mean_se(rg)
            crit.append(report(f"C10.raw_gap.b{beta:g}", f"raw finite-t gap at sqrt(2d)-alpha={beta:g}", m, se=se))
        for i in range(len(betas) - 1):
            crit.append(paired_decrease(f"C10.decrease.{i}", f"projected gap decreases {betas[i]:g}->{betas[i + 1]:g}",
                                        proj_gaps[i], proj_gaps[i + 1], z))
            crit.append(paired_decrease(f"C10.raw_decrease.{i}", f"raw gap decreases {betas[i]:g}->{betas[i + 1]:g}",
                                        raw_gaps[i], raw_gaps[i + 1], z, gated=False))
        return crit


class TailDiagnostic(Probe):
    name = "tail_diagnostic"
    threshold = 0.05

    def __init__(self, config):
        self.config = config
        self.top = config.t_max

    def levels(self):
        return set(s for s in self.config.snapshots if s >= 1.0) | {self.top}

    def observe(self, ctx):
        out = {}
        wsl = ctx.grid.window_slice()
        sup = float(ctx.snap(self.top).barrier_max[wsl].max())
        for q in self.config.tail_q:
            out[key("tail_indicator", "q", q)] = _val(float(sup >= q))
        crit = ctx.crit()
        for t in sorted(self.levels()):
            snap = ctx.snap(t)
            stat = float((snap.cumulative[wsl] - crit * t).max()) + math.log(t) / (2.0 * crit)
            out[key("centered_max", "t", t)] = _val(stat)
        return out

    def finalize(self, T, config):
        qs = sorted(config.tail_q)
        probs = [fmean(T(key("tail_indicator", "q", q))) for q in qs]
        crit = []
        for q, p in zip(qs, probs):
            crit.append(report(f"C12.p.q{q:g}", f"P[window sup >= {q:g}]", p))
        mono = all(b <= a for a, b in zip(probs[:-1], probs[1:]))
        crit.append(bound("C12.monotone", "tail probability nonincreasing in q", float(mono), 1.0, upper=False))
        crit.append(bound("C12.tail", f"P[window sup >= {qs[-1]:g}] <= {self.threshold}", probs[-1], self.threshold))
        for t in sorted(self.levels()):
            m, se = mean_se(T(key("centered_max", "t", t)))
            crit.append(report(f"C12.centered.t{t:g}", f"window max of Xbar_t - sqrt(2d)t + log t/(2 sqrt(2d))",
                               m, se=se))
        return crit


class GaugeProbe(Probe):
    """Second moments of M_t^(q) on dyadic sets and pair moments for envelopes."""

    name = "moment_and_gauge"

    def __init__(self, config, tag):
        self.config = config
        self.tag = tag
        self.t = config.gauge_t
        self.q = config.gauge_q
        self.sets = [SetSpec.dyadic(k, config.dim) for k in range(config.gauge_levels)]
        self.beta = 0.5
        self.pair_lags = tuple(2.0 ** -k for k in range(1, 11))

    def levels(self):
        return {self.t}

    def observe(self, ctx):
        out = {}
        crit = ctx.crit()
        w = ctx.weights(self.t, crit, self.q)
        for k, E in enumerate(self.sets):
            out[key("M_crit", "k", k, self.q, E.name)] = _val(integrate(w, E, "M_crit"))
        Z = w.Z_q
        best = 0.0
        n = Z.shape[0]
        size = n
        level = 0
        dim = ctx.grid.dim
        while size >= 1 and level <= 10:
            if dim == 1:
                sums = Z.reshape(-1, size).sum(axis=1) * ctx.h
            else:
                m = n // size
                sums = Z.reshape(m, size, m, size).sum(axis=(1, 3)) * ctx.h ** 2
            diam = size * ctx.h * math.sqrt(dim)
            best = max(best, float(sums.max()) / phi_modulus(diam))
            size //= 2
            level += 1
        out[key("gauge_ratio", "t", self.t, self.q, "dyadic_max")] = _val(best)
        # pair moments at lattice lags, spatially averaged over the window
        top = ctx.snap(self.t)
        wa = weight_fields(top, crit - self.beta, self.q, ctx.h, ctx.grid.points_per_side)
        wfull = weight_fields(top, crit, self.q, ctx.h, ctx.grid.points_per_side)
        wsl = ctx.grid.window_slice()
        for r in self.pair_lags:
            lag = int(round(r / ctx.h))
            if lag < 1:
                continue
            for fam, arr in (("pair_crit", wfull.W_q), ("pair_alpha", wa.W_q)):
                shifted = np.roll(arr, -lag, axis=0)
                out[key(fam, "r", r, self.q, self.tag)] = _val(np.mean(arr[wsl] * shifted[wsl]))
        return out


def _gauge_fit(T, probe, config):
    ratios = []
    for k, E in enumerate(probe.sets):
        M = T(key("M_crit", "k", k, probe.q, E.name))
        second = fmean(M ** 2)
        ratios.append(probe.t * second / varphi(2.0 ** -k * math.sqrt(config.dim), config.dim))
    return max(ratios), ratios


def _tek_fits(T, probe, config, spacing):
    d = config.dim
    fits = {}
    alpha = math.sqrt(2 * d) - probe.beta
    for kind, fam in (("tek1", "pair_crit"), ("tek3", "pair_alpha"), ("tek4", "pair_alpha")):
        obs, env = [], []
        for r in probe.pair_lags:
            if r < spacing - 1e-15:
                continue
            k = key(fam, "r", r, probe.q, probe.tag)
            if not T.has(k):
                continue
            sc = an.SeparationScales.from_distance(r, probe.t)
            obs.append(fmean(T(k)))
            env.append(an.moment_envelope(kind, sc, 1.0, t=probe.t, alpha=alpha, dim=d))
        fits[kind] = an.fit_envelope_constant(obs, env)
    return fits


# ---------------------------------------------------------------------------
# formula suite (path Monte Carlo, no field)
# ---------------------------------------------------------------------------

def _bm_max_paths(n_paths, steps, rng, chunk=50000):
    """Exact samples of sup_{[0,1]} B via grid values plus bridge maxima."""
    out = np.empty(n_paths)
    dt = 1.0 / steps
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        inc = rng.standard_normal((m, steps)) * math.sqrt(dt)
        path = np.concatenate([np.zeros((m, 1)), np.cumsum(inc, axis=1)], axis=1)
        e = rng.standard_exponential((m, steps))
        a, b = path[:, :-1], path[:, 1:]
        peaks = 0.5 * (a + b + np.sqrt((b - a) ** 2 + 2.0 * dt * e))
        out[start:start + m] = peaks.max(axis=1)
    return out


def _bridge_survival_paths(a, b, t, n_paths, steps, rng, chunk=50000):
    """Conditional Monte Carlo of P[bridge a -> b on [0,t] stays positive].

    The bridge is sampled on a grid; each step contributes its exact
    non-crossing probability given the endpoints.
    """
    out = np.empty(n_paths)
    dt = t / steps
    times = np.linspace(0.0, t, steps + 1)
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        inc = rng.standard_normal((m, steps)) * math.sqrt(dt)
        w = np.concatenate([np.zeros((m, 1)), np.cumsum(inc, axis=1)], axis=1)
        bridge = w - times / t * w[:, -1:] + a + (b - a) * times / t
        x0, x1 = bridge[:, :-1], bridge[:, 1:]
        pos = np.all(bridge > 0, axis=1)
        with np.errstate(over="ignore"):
            stay = -np.expm1(-2.0 * np.maximum(x0, 0) * np.maximum(x1, 0) / dt)
        out[start:start + m] = np.where(pos, np.prod(stay, axis=1), 0.0)
    return out


def _drift_line_paths(a, b, n_paths, horizon, steps, rng, chunk=20000):
    """Indicator that B_t - a t stays below b on [0, horizon] (exact per step)."""
    out = np.empty(n_paths)
    dt = horizon / steps
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        inc = rng.standard_normal((m, steps)) * math.sqrt(dt) - a * dt
        y = np.concatenate([np.zeros((m, 1)), np.cumsum(inc, axis=1)], axis=1)
        e = rng.standard_exponential((m, steps))
        y0, y1 = y[:, :-1], y[:, 1:]
        peaks = 0.5 * (y0 + y1 + np.sqrt((y1 - y0) ** 2 + 2.0 * dt * e))
        out[start:start + m] = (peaks.max(axis=1) < b).astype(float)
    return out


def run_formula_suite(config: ExperimentConfig) -> RunRecord:
    started = time.perf_counter()
    z = config.z
    n = config.formula_paths
    crit = []
    rng = replicate_rng(config.seed, 0, 10)
    sup1 = _bm_max_paths(max(n, 1000000), 32, rng)
    for t in (0.5, 1.0, 4.0):
        for a in (0.25, 1.0, 2.0):
            ind = (math.sqrt(t) * sup1 <= a).astype(float)
            crit.append(within(f"C4.bm_max.t{t:g}.a{a:g}", f"P[sup B <= {a:g}] over [0,{t:g}]",
                               ind, float(an.bm_max_cdf(t, a)), z, reflection=2 * _ncdf(a / math.sqrt(t)) - 1))
    rng = replicate_rng(config.seed, 0, 11)
    for a, b, t in ((1.0, 1.0, 2.0), (0.5, 1.0, 1.0), (1.0, 2.0, 4.0)):
        est = _bridge_survival_paths(a, b, t, n, 16, rng)
        crit.append(within(f"C4.bridge.a{a:g}.b{b:g}.t{t:g}", f"bridge {a:g}->{b:g} over {t:g} stays positive",
                           est, float(an.bridge_stay_positive(a, b, t)), z))
    rng = replicate_rng(config.seed, 0, 12)
    for a, b in ((1.0, 1.0), (0.5, 0.5)):
        horizon = max(40.0, 40.0 / a ** 2)
        est = _drift_line_paths(a, b, n, horizon, 400, rng)
        crit.append(within(f"C4.drift.a{a:g}.b{b:g}", f"B_t <= {a:g} t + {b:g} for all t",
                           est, float(an.drift_line_stay_below(a, b)), z, horizon=horizon))
    crit.extend(_cameron_martin_check(config))
    verdict = _apply_policy(crit, config)
    return RunRecord("formula_suite", config.to_dict(), config.digest(), [], np.zeros((0, 0)),
                     np.zeros((0, 0)), crit, verdict, time.perf_counter() - started)


def _ncdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _cameron_martin_check(config):
    """Tilted mean of Xbar_t(z) under exp(Xbar_t(z0) - t/2) equals Kbar_t(z, z0)."""
    params = StarScaleParams(config.eta1, config.eta2, 1, 0.0)
    grid = GridSpec(1, 512, 2.0)
    t = 2.0
    sched = ScaleSchedule.build(t, (t,))
    model = lattice_model(grid, sched, params)
    root = np.sqrt(model.cumulative_spectrum(len(sched.levels) - 1))
    V = model.level_variance(len(sched.levels) - 1)
    lags = (4, 16, 64)
    n = config.cm_replicates
    rng = replicate_rng(config.seed, 0, 13)
    vals = {lag: np.empty(n) for lag in lags}
    for i in range(0, n, 1000):
        m = min(1000, n - i)
        fields = sfft.irfft(root * sfft.rfft(rng.standard_normal((m, grid.points_per_side)), axis=1),
                            n=grid.points_per_side, axis=1)
        w = np.exp(fields[:, 0] - 0.5 * V)
        for lag in lags:
            vals[lag][i:i + m] = w * fields[:, lag]
    out = []
    for lag in lags:
        r = lag * grid.spacing
        H = lambda zz, z0: float(slab_covariance(0.0, t, abs(zz - z0), params, model.profile))
        out.append(within(f"C4.cameron_martin.r{r:g}", f"tilted mean of Xbar_t(z) = Kbar_t(z,z0), |z-z0|={r:g}",
                          vals[lag], an.cameron_martin_mean(H, 0.0, r), config.z))
    return out


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

def _apply_policy(criteria, config):
    if not config.gated:
        for c in criteria:
            c.gated = False
    return overall(criteria)


def _require(config, minimum=100):
    if config.replicates < minimum and config.gated:
        raise ValidationError(f"gated experiments need N >= {minimum}, got {config.replicates}")


def _record(name, probe_list, T, config, started, crit=None):
    crit = crit if crit is not None else [c for p in probe_list for c in p.finalize(T, config)]
    verdict = _apply_policy(crit, config)
    return RunRecord(name, config.to_dict(), config.digest(), list(T.keys), T.raw, T.renorm, crit, verdict,
                     time.perf_counter() - started)


def _single(probe_cls, config):
    _require(config)
    started = time.perf_counter()
    probe = probe_cls(config)
    T, model = run_campaign(config, [probe])
    probe.model = model
    return _record(probe.name, [probe], T, config, started)


def run_field_statistics(config):
    return _single(FieldStatistics, config)


def run_measure_identities(config):
    return _single(MeasureIdentities, config)


def run_derivative_convergence(config):
    return _single(DerivativeConvergence, config)


def run_seneta_heyde(config):
    return _single(SenetaHeyde, config)


def run_subcritical_limit(config):
    return _single(SubcriticalLimit, config)


def run_tail_diagnostic(config):
    return _single(TailDiagnostic, config)


class MollifiedProbe(Probe):
    name = "mollified_convergence"

    def __init__(self, config):
        self.config = config
        self.eps_list = tuple(sorted(config.eps_list, reverse=True))
        if not self.eps_list:
            raise ValidationError("mollified_convergence needs eps_list")

    def levels(self):
        return {math.log(1.0 / e) for e in self.eps_list}

    def observe(self, ctx):
        q = self.config.q_main
        crit = ctx.crit()
        top = ctx.model.schedule.t_max
        out = {}
        wT = ctx.weights(top, crit, q)
        out[key("D", "t", top, q, "window")] = _val(integrate(wT, None, "D"))
        for eps in self.eps_list:
            te = math.log(1.0 / eps)
            barrier = ctx.snap(te).barrier_max
            for name in self.config.mollifiers:
                mf = ctx.mollified(eps, name)
                w = weight_fields(ctx.snap(top), crit, q, ctx.h, ctx.wp, values=mf.values,
                                  variance=mf.variance, barrier=barrier)
                M = integrate(w, None, "M_eps")
                out[key("M_eps", "eps", eps, q, name)] = _val(M, renormalize(M, "M_eps", eps=eps))
        return out

    def finalize(self, T, config):
        q, z = config.q_main, config.z
        top = self.top
        D = T(key("D", "t", top, q, "window"))
        crit = []
        names = config.mollifiers
        for name in names:
            gaps = []
            for eps in self.eps_list:
                g = (T(key("M_eps", "eps", eps, q, name), True) - D) ** 2
                gaps.append(g)
                m, se = mean_se(g)
                crit.append(report(f"C9.gap.{name}.eps{eps:g}", f"E[(renormalized M_eps - D_T)^2], {name}", m, se=se))
                mm, sm = mean_se(T(key("M_eps", "eps", eps, q, name), True))
                crit.append(report(f"C9.mean.{name}.eps{eps:g}", "E[renormalized M_eps^(q)]", mm, se=sm))
            for i in range(len(gaps) - 1):
                crit.append(paired_decrease(f"C9.decrease.{name}.{i}",
                                            f"{name} gap decreases eps={self.eps_list[i]:g}->{self.eps_list[i + 1]:g}",
                                            gaps[i], gaps[i + 1], z))
        if len(names) >= 2:
            a, b = names[0], names[1]
            diffs = []
            for eps in self.eps_list:
                d = (T(key("M_eps", "eps", eps, q, a), True) - T(key("M_eps", "eps", eps, q, b), True)) ** 2
                diffs.append(d)
                m, se = mean_se(d)
                crit.append(report(f"C9.mollifier_gap.eps{eps:g}", f"E[(M_eps[{a}] - M_eps[{b}])^2] renormalized",
                                   m, se=se))
            for i in range(len(diffs) - 1):
                crit.append(paired_decrease(f"C9.mollifier_decrease.{i}",
                                            f"mollifiers agree increasingly eps={self.eps_list[i]:g}->"
                                            f"{self.eps_list[i + 1]:g}", diffs[i], diffs[i + 1], z))
        return crit


def run_mollified_convergence(config):
    _require(config)
    started = time.perf_counter()
    grid = config.grid
    for eps in config.eps_list:
        if eps < 4.0 * grid.spacing:
            from .errors import UnresolvableMollifier
            raise UnresolvableMollifier(f"UnresolvableMollifier: eps={eps:g} < 4*spacing={4 * grid.spacing:g}")
        if config.t_max + 1e-12 < math.log(1.0 / eps) + 4.0:
            raise ValidationError(f"t_max={config.t_max} below log(1/eps)+4 for eps={eps:g}")
    probe = MollifiedProbe(config)
    T, model = run_campaign(config, [probe], mollified=True)
    probe.top = model.schedule.t_max
    probe.model = model
    return _record(probe.name, [probe], T, config, started)


def run_moment_and_gauge(config, fine=None):
    """Gauge fit on the manifest grid and on a grid with twice the spacing.

    ``fine`` optionally supplies an already-run (Table, probe) pair for the
    manifest grid so a shared campaign can be reused.
    """
    _require(config)
    started = time.perf_counter()
    if fine is None:
        fprobe = GaugeProbe(config, "fine")
        gcfg = replace(config, t_max=max(config.gauge_t, 0.0), snapshots=(config.gauge_t,))
        Tf, _ = run_campaign(gcfg, [fprobe])
    else:
        Tf, fprobe = fine
    coarse_grid = GridSpec(config.dim, config.points_per_side // 2, config.box_side)
    cprobe = GaugeProbe(config, "coarse")
    ccfg = replace(config, points_per_side=config.points_per_side // 2, t_max=config.gauge_t,
                   snapshots=(config.gauge_t,))
    Tc, _ = run_campaign(ccfg, [cprobe], grid=coarse_grid)
    cf, rf = _gauge_fit(Tf, fprobe, config)
    cc, rc = _gauge_fit(Tc, cprobe, config)
    crit = [
        report("C11.C_fine", f"fitted C, spacing {config.grid.spacing:g}", cf, ratios=rf),
        report("C11.C_coarse", f"fitted C, spacing {coarse_grid.spacing:g}", cc, ratios=rc),
        bound("C11.stability", "fitted gauge constant stable within 25% under grid doubling",
              abs(cf / cc - 1.0), 0.25, fine=cf, coarse=cc),
    ]
    fine_tek = _tek_fits(Tf, fprobe, config, config.grid.spacing)
    coarse_tek = _tek_fits(Tc, cprobe, config, coarse_grid.spacing)
    for kind in fine_tek:
        crit.append(bound(f"ENV.{kind}", f"{kind} envelope constant grows at most 25% under grid doubling",
                          fine_tek[kind] / coarse_tek[kind], 1.25, gated=False,
                          fine=fine_tek[kind], coarse=coarse_tek[kind]))
    ratios = Tf(key("gauge_ratio", "t", fprobe.t, fprobe.q, "dyadic_max"))
    crit.append(report("GAUGE.dyadic_max.mean", "max over dyadic boxes of D_T^(q)(E)/phi(|E|), mean", fmean(ratios),
                       median=float(np.median(ratios)), p95=float(np.quantile(ratios, 0.95)),
                       maximum=float(np.max(ratios))))
    keys = list(Tf.keys) + [k for k in Tc.keys]
    raw = np.concatenate([Tf.raw, Tc.raw], axis=1)
    ren = np.concatenate([Tf.renorm, Tc.renorm], axis=1)
    verdict = _apply_policy(crit, config)
    return RunRecord("moment_and_gauge", config.to_dict(), config.digest(), keys, raw, ren, crit, verdict,
                     time.perf_counter() - started)


PROBES = {
    "field_statistics": FieldStatistics,
    "measure_identities": MeasureIdentities,
    "derivative_convergence": DerivativeConvergence,
    "seneta_heyde": SenetaHeyde,
    "subcritical_limit": SubcriticalLimit,
    "tail_diagnostic": TailDiagnostic,
}

RUNNERS = {
    "field_statistics": run_field_statistics,
    "measure_identities": run_measure_identities,
    "derivative_convergence": run_derivative_convergence,
    "seneta_heyde": run_seneta_heyde,
    "subcritical_limit": run_subcritical_limit,
    "tail_diagnostic": run_tail_diagnostic,
    "mollified_convergence": run_mollified_convergence,
    "formula_suite": run_formula_suite,
    "moment_and_gauge": run_moment_and_gauge,
}


def run_experiments(config: ExperimentConfig, names=None) -> dict:
    """Run several experiments, sharing one field campaign where possible."""
    names = list(names or config.experiments)
    for nm in names:
        if nm not in RUNNERS:
            raise ValidationError(f"unknown experiment {nm!r}")
    shared = [nm for nm in names if nm in PROBES]
    out = {}
    if shared:
        _require(config)
        started = time.perf_counter()
        probes = [PROBES[nm](config) for nm in shared]
        gauge = None
        if "moment_and_gauge" in names and config.gauge_t <= config.t_max:
            gauge = GaugeProbe(config, "fine")
            probes.append(gauge)
        T, model = run_campaign(config, probes)
        elapsed = time.perf_counter() - started
        for p in probes:
            p.model = model
        for nm, p in zip(shared, probes):
            t0 = time.perf_counter()
            rec = _record(nm, [p], _subtable(T, p, config), config, t0)
            rec.wall_clock += elapsed / len(shared)
            out[nm] = rec
        if gauge is not None:
            out["moment_and_gauge"] = run_moment_and_gauge(config, fine=(_subtable(T, gauge, config), gauge))
    for nm in names:
        if nm not in out:
            out[nm] = RUNNERS[nm](config)
    return {nm: out[nm] for nm in names}


def _subtable(T, probe, config):
    """Columns produced by one probe (probes emit disjoint or identical keys)."""
    ctx_keys = getattr(probe, "_keys", None)
    if ctx_keys is None:
        return T
    idx = [T.keys.index(k) for k in ctx_keys]
    return Table([T.keys[i] for i in idx], T.raw[:, idx], T.renorm[:, idx])


def write_record(record: RunRecord, out_dir: str) -> dict:
    """Write the tidy CSV and verdict JSON; wall-clock goes to a separate file."""
    import csv
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{record.experiment}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(record.tidy_rows())
    json_path = os.path.join(out_dir, f"{record.experiment}_verdict.json")
    with open(json_path, "w") as fh:
        json.dump(record.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    timing_path = os.path.join(out_dir, "timing.json")
    timing = {}
    if os.path.exists(timing_path):
        with open(timing_path) as fh:
            timing = json.load(fh)
    timing[record.experiment] = round(record.wall_clock, 3)
    with open(timing_path, "w") as fh:
        json.dump(timing, fh, indent=2, sort_keys=True)
    return {"csv": csv_path, "json": json_path}
