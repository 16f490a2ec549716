"""Monte Carlo harness: data generators and error-rate estimation.

Each replicate draws an ensemble from an independent counter-based stream
keyed by (seed, replicate_index), runs the configured analysis, and records
the realized average error measure over the selected families together with
the selected fraction. Results are bit-identical for any worker count.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .adjust import (
    selection_adjusted,
    simple_selection_adjusted,
    unadjusted_analysis,
)
from .core import ErrorMetric, PValueEnsemble, average_over_selected
from .procedures import Procedure
from .selection import _r_min_scan, check_concordant

ADJUSTMENTS = ("simple", "rmin", "none")
DEPENDENCE_MODELS = ("independent", "equicorrelated")


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    m families of size n (an int, or one size per family). A fraction pi1 of
    each family's hypotheses is non-null with one-sided normal shift mu;
    pi1 = 0 is the all-null case. Under the equicorrelated model every test
    statistic shares a latent factor with weight sqrt(rho), which keeps the
    null p-values positively regression dependent.
    """

    m: int
    n: object
    q: float
    rule: object
    procedure: Procedure
    metric: ErrorMetric
    replicates: int
    seed: int = 0
    pi1: float = 0.0
    mu: float = 0.0
    dependence: str = "independent"
    rho: float = 0.0
    adjustment: str = "simple"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0, 1)")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not 0.0 <= self.pi1 <= 1.0:
            raise ValueError("pi1 must lie in [0, 1]")
        if self.mu < 0.0:
            raise ValueError("mu must be nonnegative")
        if self.dependence not in DEPENDENCE_MODELS:
            raise ValueError(f"unknown dependence model {self.dependence!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.adjustment not in ADJUSTMENTS:
            raise ValueError(f"unknown adjustment {self.adjustment!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        sizes = self.sizes()
        if len(sizes) != self.m or any(s < 1 for s in sizes):
            raise ValueError("need one positive family size per family")

    def sizes(self) -> list:
        if isinstance(self.n, (int, np.integer)):
            return [int(self.n)] * self.m
        return [int(s) for s in self.n]


@dataclass(frozen=True)
class SimEstimate:
    """Monte Carlo estimate of E(C_S) and E(|S|/m)."""

    e_cs_hat: float
    e_sel_frac_hat: float
    se: float
    replicates: int

    def __post_init__(self):
        if self.e_cs_hat < 0.0 or self.se < 0.0:
            raise ValueError("estimates and standard errors are nonnegative")


def _replicate_rng(seed: int, replicate_index: int) -> np.random.Generator:
    # Philox is counter based; keying by (seed, replicate) gives every
    # replicate its own stream independent of execution order.
    return np.random.Generator(np.random.Philox(key=[seed, replicate_index]))


class _ReplicateStreams:
    """One reusable Philox generator, rekeyed per replicate.

    Resetting the bit generator's state to a fresh (seed, replicate) key
    yields exactly the stream a newly constructed generator would, without
    paying the construction cost inside the replicate loop.
    """

    def __init__(self, seed: int):
        self._seed = seed
        self._bitgen = np.random.Philox(key=[seed, 0])
        self._gen = np.random.Generator(self._bitgen)
        self._template = self._bitgen.state

    def rekey(self, replicate_index: int) -> np.random.Generator:
        state = dict(self._template)
        state["state"] = {
            "counter": np.zeros(4, dtype=np.uint64),
            "key": np.array([self._seed, replicate_index], dtype=np.uint64),
        }
        state["buffer"] = np.zeros(4, dtype=np.uint64)
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        self._bitgen.state = state
        return self._gen


def generate(
    config: ScenarioConfig, replicate_index: int, rng: np.random.Generator | None = None
) -> PValueEnsemble:
    """Draw one ensemble (with truth mask) under the scenario's model.

    Null p-values are uniform; non-null p-values are one-sided normal
    p-values 1 - Phi(Z + mu). The equicorrelated model builds every
    statistic from a shared factor, X = sqrt(rho) * Z0 + sqrt(1 - rho) * Z
    (+ mu for non-nulls), and sets p = 1 - Phi(X). The leading
    round(pi1 * n_i) hypotheses of each family are the non-null ones.

    rng, when supplied, must sit at the start of the (seed, replicate_index)
    stream; the Monte Carlo loop passes a reused, rekeyed generator.
    """
    if rng is None:
        rng = _replicate_rng(config.seed, replicate_index)
    sizes = config.sizes()
    root = math.sqrt(config.rho)
    spread = math.sqrt(1.0 - config.rho)
    if len(set(sizes)) == 1:
        m, n = config.m, sizes[0]
        k1 = int(round(config.pi1 * n))
        truth = np.ones((m, n), dtype=bool)
        if k1:
            truth[:, :k1] = False
        if config.dependence == "equicorrelated":
            z0 = rng.standard_normal()
            x = root * z0 + spread * rng.standard_normal((m, n))
            if k1:
                x[:, :k1] += config.mu
            pvals = special.ndtr(-x)
        else:
            pvals = np.empty((m, n))
            pvals[:, k1:] = rng.uniform(size=(m, n - k1))
            if k1:
                pvals[:, :k1] = special.ndtr(
                    -(rng.standard_normal((m, k1)) + config.mu)
                )
        return PValueEnsemble(pvals, truth=truth)
    fams = []
    masks = []
    if config.dependence == "equicorrelated":
        z0 = rng.standard_normal()
    for n_i in sizes:
        k1 = int(round(config.pi1 * n_i))
        mask = np.ones(n_i, dtype=bool)
        mask[:k1] = False
        if config.dependence == "equicorrelated":
            x = root * z0 + spread * rng.standard_normal(n_i)
            x[:k1] += config.mu
            p = special.ndtr(-x)
        else:
            p = np.empty(n_i)
            p[k1:] = rng.uniform(size=n_i - k1)
            p[:k1] = special.ndtr(-(rng.standard_normal(k1) + config.mu))
        fams.append(p)
        masks.append(mask)
    return PValueEnsemble(fams, truth=masks)


# Procedure kinds the batched kernel below can evaluate.
_BATCH_KINDS = ("bonferroni", "holm", "hochberg", "bh", "two_stage", "lr_kfwer")


def _step_up_counts(ps: np.ndarray, crit: np.ndarray) -> np.ndarray:
    hits = ps <= crit
    n = ps.shape[1]
    return np.where(hits.any(axis=1), n - np.argmax(hits[:, ::-1], axis=1), 0)


def _step_down_counts(ps: np.ndarray, crit: np.ndarray) -> np.ndarray:
    ok = ps <= crit
    return np.where(ok.all(axis=1), ps.shape[1], np.argmin(ok, axis=1))


def _batch_test_counts(procedure: Procedure, ps, nulls_sorted, levels):
    """Rejection and false-rejection counts for a block of tested families.

    ps is a (s, n) matrix of row-sorted p-values, nulls_sorted the truth
    mask permuted the same way, levels the per-family testing levels. The
    arithmetic mirrors the scalar procedures term for term so that counts
    (and hence every realized error measure) agree bit for bit.
    """
    s, n = ps.shape
    ranks = np.arange(1, n + 1)
    kind = procedure.kind
    if kind == "bonferroni":
        r = (ps <= levels[:, None] / n).sum(axis=1)
    elif kind == "bh":
        r = _step_up_counts(ps, ranks[None, :] * (levels[:, None] / n))
    elif kind == "hochberg":
        r = _step_up_counts(ps, levels[:, None] / (n - ranks[None, :] + 1))
    elif kind == "holm":
        r = _step_down_counts(ps, levels[:, None] / (n - ranks[None, :] + 1))
    elif kind == "lr_kfwer":
        k = procedure.k
        crit = np.where(
            ranks[None, :] <= k,
            k * levels[:, None] / n,
            k * levels[:, None] / (n + k - ranks[None, :]),
        )
        r = _step_down_counts(ps, crit)
    elif kind == "two_stage":
        q1 = levels / (1.0 + levels)
        r1 = _step_up_counts(ps, ranks[None, :] * (q1[:, None] / n))
        m0 = n - r1
        level2 = q1 * n / np.maximum(m0, 1)
        r2 = _step_up_counts(ps, ranks[None, :] * (level2[:, None] / n))
        r = np.where(m0 == 0, n, r2)
    else:
        raise ValueError(f"no batched kernel for {kind}")
    null_counts = np.cumsum(nulls_sorted, axis=1)
    v = np.where(
        r > 0,
        np.take_along_axis(null_counts, np.maximum(r, 1)[:, None] - 1, axis=1)[:, 0],
        0,
    )
    return r, v


def _metric_values(metric: ErrorMetric, v: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Vectorized counterpart of core.metric_value."""
    v = v.astype(np.float64)
    kind = metric.kind
    if kind == "pfer":
        return v
    if kind == "fwer":
        return (v >= 1).astype(np.float64)
    fdp = v / np.maximum(r, 1)
    if kind == "fdr":
        return fdp
    if kind == "fdx":
        return (fdp > metric.gamma).astype(np.float64)
    if kind == "kfwer":
        return (v >= metric.k).astype(np.float64)
    return np.where(v >= metric.k, fdp, 0.0)


def _fast_replicate(config: ScenarioConfig, ens: PValueEnsemble):
    """(C_S, |S|/m) via batched within-family testing.

    Requires a rectangular ensemble with truth and a parametric procedure;
    produces exactly the values of the per-family object path.
    """
    rule, procedure, q = config.rule, config.procedure, config.q
    summaries = rule.summaries(ens)
    picked = rule.select_from_summaries(summaries)
    r_sel = int(picked.size)
    if r_sel == 0:
        return 0.0, 0.0
    if config.adjustment == "none":
        levels = np.full(r_sel, q)
    elif config.adjustment == "simple" or getattr(rule, "is_simple", False):
        levels = np.full(r_sel, r_sel * q / ens.m)
    else:
        rmins = np.array([_r_min_scan(rule, summaries, int(i)) for i in picked])
        levels = rmins * q / ens.m
    block = ens.rect[picked]
    order = np.argsort(block, axis=1, kind="stable")
    ps = np.take_along_axis(block, order, axis=1)
    nulls_sorted = np.take_along_axis(ens.truth_rect[picked], order, axis=1)
    r, v = _batch_test_counts(procedure, ps, nulls_sorted, levels)
    values = _metric_values(config.metric, v, r)
    total = 0.0
    for value in values.tolist():  # fixed-order sum, matching the object path
        total += value
    return total / r_sel, r_sel / ens.m


def _object_replicate(config: ScenarioConfig, ens: PValueEnsemble):
    """(C_S, |S|/m) through the full analysis objects."""
    rule, proc, q, metric = config.rule, config.procedure, config.q, config.metric
    if config.adjustment == "simple":
        analysis = simple_selection_adjusted(ens, rule, proc, q, metric=metric)
    elif config.adjustment == "rmin":
        analysis = selection_adjusted(ens, rule, proc, q, metric=metric)
    else:
        analysis = unadjusted_analysis(ens, rule, proc, q, metric=metric)
    c_s = average_over_selected(analysis.decisions, analysis.selection.r)
    return c_s, analysis.selection.r / ens.m


def _replicate_values(config: ScenarioConfig, start: int, stop: int, fast=None):
    """Per-replicate (C_S, |S|/m) for replicate indices [start, stop)."""
    if fast is None:
        fast = (
            len(set(config.sizes())) == 1
            and config.procedure.kind in _BATCH_KINDS
        )
    evaluate = _fast_replicate if fast else _object_replicate
    cs = np.empty(stop - start)
    frac = np.empty(stop - start)
    streams = _ReplicateStreams(config.seed)
    for idx in range(start, stop):
        ens = generate(config, idx, rng=streams.rekey(idx))
        cs[idx - start], frac[idx - start] = evaluate(config, ens)
    return cs, frac


def estimate(config: ScenarioConfig, workers: int = 1) -> SimEstimate:
    """Monte Carlo estimate of E(C_S) and E(|S|/m) with its standard error.

    Replicates may be spread over worker processes; per-replicate streams
    and a fixed aggregation order make the result independent of workers.
    """
    reps = config.replicates
    if workers is None or workers < 2 or reps < 2:
        cs, frac = _replicate_values(config, 0, reps)
    else:
        edges = np.linspace(0, reps, num=min(workers, reps) + 1, dtype=int)
        spans = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=len(spans)) as pool:
            parts = list(
                pool.map(
                    _replicate_values,
                    [config] * len(spans),
                    [a for a, _ in spans],
                    [b for _, b in spans],
                )
            )
        cs = np.concatenate([p[0] for p in parts])
        frac = np.concatenate([p[1] for p in parts])
    se = float(cs.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    return SimEstimate(float(cs.mean()), float(frac.mean()), se, reps)


def closed_form_example1(q: float, m: int, n: int):
    """Exact (E(C_S), E(|S|/m)) for the min-p selection bias benchmark.

    The scenario: m all-null families of n uniform p-values, a family is
    selected when its minimal p-value is <= q, and each selected family runs
    Bonferroni at the unadjusted level q with C the at-least-one-error
    indicator. Then E(|S|/m) = 1 - (1-q)^n and

        E(C_S) = (1 - (1 - q/n)^n) * (1 - (1-q)^(n*m)) / (1 - (1-q)^n).
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if m < 1 or n < 1:
        raise ValueError("m and n must be at least 1")
    sel_frac = 1.0 - (1.0 - q) ** n
    e_cs = (1.0 - (1.0 - q / n) ** n) * (1.0 - (1.0 - q) ** (n * m)) / sel_frac
    return e_cs, sel_frac


def prds_control_check(
    config: ScenarioConfig, workers: int = 1, concordance_trials: int = 200
) -> SimEstimate:
    """Estimate the dependent-case control quantity for a concordant rule.

    With Bonferroni inside, the estimated quantity is the expected average
    count of false rejections over the selected families; with BH inside it
    is the expected average false discovery proportion. Both run at the
    R_min-adjusted levels. The rule must survive the randomized concordance
    check; non-concordant rules are rejected.
    """
    if config.procedure.kind == "bonferroni":
        forced_metric = ErrorMetric("pfer")
    elif config.procedure.kind == "bh":
        forced_metric = ErrorMetric("fdr")
    else:
        raise ValueError(
            "the dependent-case guarantee covers bonferroni or bh inside"
        )
    probe = generate(config, 0)
    report = check_concordant(
        config.rule, probe, concordance_trials, seed=config.seed
    )
    if report.witness_found:
        raise ValueError(
            "selection rule failed the concordance check: raising p-values "
            f"outside family {report.family} moved R_min from "
            f"{report.r_min_before} to {report.r_min_after}"
        )
    forced = replace(config, metric=forced_metric, adjustment="rmin")
    return estimate(forced, workers=workers)
