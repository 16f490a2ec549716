"""Family selection rules, global-null p-value combiners, and R_min.

Every shipped rule reduces each family to a scalar summary (its minimal
p-value, or a combined global-null p-value) and selects families from the
vector of summaries. That structure is what makes the exact R_min scan and
the randomized property checks below possible.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import PValueEnsemble, SelectionOutcome
from .procedures import Procedure

COMBINERS = ("bonferroni_min", "simes", "fisher", "stouffer")

# Transform-based combiners clamp p-values into [floor, 1 - 1ulp] so that
# log(p) and the normal quantile stay finite at both ends.
DEFAULT_P_FLOOR = 1e-300
_P_CEIL = 1.0 - 1e-16


class UnsupportedRuleError(ValueError):
    """Raised when R_min cannot be computed for a selection rule."""


def _combine_rows(kind: str, rows: np.ndarray, floor: float) -> np.ndarray:
    """Combined global-null p-value for each row of a (k, n) matrix."""
    n = rows.shape[1]
    if kind == "bonferroni_min":
        out = n * rows.min(axis=1)
    elif kind == "simes":
        ranked = np.sort(rows, axis=1)
        out = (ranked * (n / np.arange(1.0, n + 1.0))).min(axis=1)
    elif kind == "fisher":
        stat = -2.0 * np.log(np.clip(rows, floor, 1.0)).sum(axis=1)
        out = special.chdtrc(2 * n, stat)
    elif kind == "stouffer":
        z = -special.ndtri(np.clip(rows, floor, _P_CEIL))
        out = special.ndtr(-z.sum(axis=1) / np.sqrt(n))
    else:
        raise ValueError(f"unknown combiner {kind!r}")
    return np.clip(out, 0.0, 1.0)


def combine(combiner: str, pvalues, floor: float = DEFAULT_P_FLOOR) -> float:
    """Single valid p-value for a family's intersection (global null) hypothesis.

    bonferroni_min: min(1, n * min p).  simes: min_j n * p_(j) / j.
    fisher: chi-square(2n) upper tail of -2 sum log p.  stouffer: standard
    normal upper tail of sum_j ppf(1 - p_j) / sqrt(n).
    """
    p = np.asarray(pvalues, dtype=np.float64)
    if p.size == 0:
        raise ValueError("cannot combine an empty p-value list")
    return float(_combine_rows(combiner, p[None, :], floor)[0])


def combined_pvalues(
    combiner: str, ensemble: PValueEnsemble, floor: float = DEFAULT_P_FLOOR
) -> np.ndarray:
    """Combined p-value of every family in the ensemble."""
    if ensemble.rect is not None:
        return _combine_rows(combiner, ensemble.rect, floor)
    return np.array([combine(combiner, f, floor) for f in ensemble.families])


@dataclass(frozen=True)
class MinPThreshold:
    """Select every family whose smallest p-value is <= t."""

    t: float

    is_simple = True

    def __post_init__(self):
        if not 0.0 < self.t <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")

    def summaries(self, ensemble: PValueEnsemble) -> np.ndarray:
        return ensemble.min_p()

    def summary_of(self, pvalues) -> float:
        return float(np.min(pvalues))

    def select_from_summaries(self, summaries: np.ndarray) -> np.ndarray:
        return np.flatnonzero(summaries <= self.t)

    def summary_thresholds(self, m: int) -> np.ndarray:
        return np.array([self.t])

    def describe(self) -> str:
        return f"minp:{self.t:g}"


@dataclass(frozen=True)
class TopKMinP:
    """Select the k families with the smallest minimal p-values.

    Ties are broken in favor of the smaller family index, so exactly k
    families are selected whenever the ensemble has at least k.
    """

    k: int

    is_simple = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")

    def summaries(self, ensemble: PValueEnsemble) -> np.ndarray:
        return ensemble.min_p()

    def summary_of(self, pvalues) -> float:
        return float(np.min(pvalues))

    def select_from_summaries(self, summaries: np.ndarray) -> np.ndarray:
        if self.k > summaries.size:
            raise ValueError(f"k={self.k} exceeds the number of families")
        picked = np.argsort(summaries, kind="stable")[: self.k]
        picked.sort()
        return picked

    def summary_thresholds(self, m: int) -> np.ndarray:
        return np.empty(0)  # selection depends on ranks only

    def describe(self) -> str:
        return f"topk:{self.k}"


@dataclass(frozen=True)
class GlobalNullTest:
    """Combine each family and select those whose global null is rejected.

    The procedure runs on the m combined p-values at `level`; generic
    step_up / step_down procedures carry their own critical values and take
    level=None.
    """

    combiner: str
    procedure: Procedure
    level: float | None = None
    floor: float = DEFAULT_P_FLOOR

    def __post_init__(self):
        if self.combiner not in COMBINERS:
            raise ValueError(f"unknown combiner {self.combiner!r}")
        if self.level is not None and not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")

    @property
    def is_simple(self) -> bool:
        # Single-step, step-up and step-down testing keeps the rejection
        # count fixed while a rejected value moves below its cutoff; the
        # adaptive two-stage procedure does not.
        return self.procedure.stepwise != "adaptive"

    def summaries(self, ensemble: PValueEnsemble) -> np.ndarray:
        return combined_pvalues(self.combiner, ensemble, self.floor)

    def summary_of(self, pvalues) -> float:
        return combine(self.combiner, pvalues, self.floor)

    def select_from_summaries(self, summaries: np.ndarray) -> np.ndarray:
        return self.procedure.apply(summaries, self.level)

    def summary_thresholds(self, m: int) -> np.ndarray:
        return self.procedure.thresholds(m, self.level)

    def describe(self) -> str:
        level = "" if self.level is None else f":{self.level:g}"
        return f"global:{self.combiner}:{self.procedure.describe()}{level}"


def select(rule, ensemble: PValueEnsemble) -> SelectionOutcome:
    """Apply the selection rule; r_min entries are filled later if needed."""
    picked = rule.select_from_summaries(rule.summaries(ensemble))
    return SelectionOutcome(selected=frozenset(picked.tolist()), r=int(picked.size))


def _is_summary_rule(rule) -> bool:
    return all(
        hasattr(rule, name)
        for name in ("summaries", "select_from_summaries", "summary_thresholds")
    )


def _r_min_scan(rule, summaries: np.ndarray, i: int) -> int:
    """Exact minimization of the selected count over family i's summary.

    The selected set, as a function of summary value s, can only change when
    s crosses another family's summary or one of the rule's own cutoffs, so
    evaluating at those breakpoints and at the midpoints between them covers
    every attainable outcome.
    """
    if not _is_summary_rule(rule):
        raise UnsupportedRuleError(
            "R_min needs a rule that consumes one scalar summary per family"
        )
    m = summaries.size
    breaks = {0.0, 1.0, float(summaries[i])}
    breaks.update(float(s) for j, s in enumerate(summaries) if j != i)
    breaks.update(
        float(t) for t in rule.summary_thresholds(m) if 0.0 <= t <= 1.0
    )
    pts = np.array(sorted(breaks))
    candidates = np.concatenate([pts, (pts[:-1] + pts[1:]) / 2.0])
    best = None
    work = summaries.copy()
    for s in candidates:
        work[i] = s
        picked = rule.select_from_summaries(work)
        if (picked == i).any() and (best is None or picked.size < best):
            best = int(picked.size)
    if best is None:
        raise UnsupportedRuleError(
            f"family {i} is never selected for any summary value"
        )
    return best


def r_min(rule, ensemble: PValueEnsemble, i: int) -> int:
    """Minimal number of selected families over replacements of family i's
    p-values that keep family i selected, other families held fixed.

    Simple rules take the shortcut r_min = R (the count cannot move while a
    selected family stays selected); other summary-based rules get the exact
    breakpoint scan. Rules that consume more than a per-family summary raise
    UnsupportedRuleError.
    """
    if not _is_summary_rule(rule):
        raise UnsupportedRuleError(
            "R_min needs a rule that consumes one scalar summary per family"
        )
    summaries = rule.summaries(ensemble)
    picked = rule.select_from_summaries(summaries)
    if not (picked == i).any():
        raise ValueError(f"family {i} is not selected")
    if getattr(rule, "is_simple", False):
        return int(picked.size)
    return _r_min_scan(rule, summaries, i)


@dataclass
class SimplenessReport:
    """Result of the randomized fixed-count (simpleness) check."""

    witness_found: bool
    family: int
    r_observed: int
    r_witness: int | None = None
    replacement: np.ndarray | None = None
    trials: int = 0


def check_simple(
    rule, ensemble: PValueEnsemble, i: int, trials: int, seed: int = 0
) -> SimplenessReport:
    """Randomized falsifier for simpleness at family i.

    Resamples family i's p-values uniformly, keeps only draws under which i
    stays selected, and reports a witness replacement if the number of
    selected families ever differs from the observed one. Finding no witness
    does not prove simpleness.
    """
    rng = np.random.default_rng(seed)
    summaries = rule.summaries(ensemble)
    picked = rule.select_from_summaries(summaries)
    if not (picked == i).any():
        raise ValueError(f"family {i} is not selected")
    r_observed = int(picked.size)
    n_i = ensemble.size(i)
    work = summaries.copy()
    for t in range(trials):
        replacement = rng.uniform(size=n_i)
        work[i] = rule.summary_of(replacement)
        picked = rule.select_from_summaries(work)
        if not (picked == i).any():
            continue
        if picked.size != r_observed:
            return SimplenessReport(
                True, i, r_observed, int(picked.size), replacement, t + 1
            )
    return SimplenessReport(False, i, r_observed, None, None, trials)


@dataclass
class ConcordanceReport:
    """Result of the randomized concordance check."""

    witness_found: bool
    family: int | None = None
    r_min_before: int | None = None
    r_min_after: int | None = None
    trials: int = 0


def check_concordant(
    rule, ensemble: PValueEnsemble, trials: int, seed: int = 0
) -> ConcordanceReport:
    """Randomized falsifier for concordance.

    Raising p-values outside a family must never raise that family's
    attainable minimum selected count. Each trial bumps a random subset of
    the other families' p-values toward 1 and compares R_min before and
    after. Finding no witness does not prove concordance.
    """
    if not _is_summary_rule(rule):
        raise UnsupportedRuleError(
            "the concordance check needs a summary-based rule"
        )
    rng = np.random.default_rng(seed)
    summaries = rule.summaries(ensemble)
    m = ensemble.m
    for t in range(trials):
        i = int(rng.integers(m))
        before = _r_min_scan(rule, summaries, i)
        bumped = summaries.copy()
        others = [j for j in range(m) if j != i]
        chosen = [j for j in others if rng.uniform() < 0.5] or others[:1]
        for j in chosen:
            p = ensemble.family(j)
            raised = p + rng.uniform(size=p.size) * (1.0 - p)
            bumped[j] = rule.summary_of(raised)
        after = _r_min_scan(rule, bumped, i)
        if after > before:
            return ConcordanceReport(True, i, before, after, t + 1)
    return ConcordanceReport(False, None, None, None, trials)
