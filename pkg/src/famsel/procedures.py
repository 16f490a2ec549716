"""Within-family multiple testing procedures applied at a given level.

All procedures take a 1d array-like of p-values and return the rejected
indices as a sorted integer array. Comparisons against critical values use
<=, so ties at a cutoff are always rejected together.
"""

from dataclasses import dataclass

import numpy as np

PROCEDURE_KINDS = (
    "bonferroni",
    "holm",
    "hochberg",
    "bh",
    "two_stage",
    "lr_kfwer",
    "step_up",
    "step_down",
)

_STEPWISE = {
    "bonferroni": "single-step",
    "holm": "step-down",
    "hochberg": "step-up",
    "bh": "step-up",
    "two_stage": "adaptive",
    "lr_kfwer": "step-down",
    "step_up": "step-up",
    "step_down": "step-down",
}


def bonferroni(pvalues, level: float) -> np.ndarray:
    """Reject every hypothesis with p <= level / n."""
    p = np.asarray(pvalues, dtype=np.float64)
    return np.flatnonzero(p <= level / p.size)


def step_up(pvalues, critical_values) -> np.ndarray:
    """Generic step-up: reject the k* smallest p-values, k* = max{k : p_(k) <= c_k}."""
    p = np.asarray(pvalues, dtype=np.float64)
    crit = np.asarray(critical_values, dtype=np.float64)
    if crit.shape != p.shape:
        raise ValueError("need exactly one critical value per p-value")
    order = np.argsort(p, kind="stable")
    hits = np.flatnonzero(p[order] <= crit)
    if hits.size == 0:
        return np.empty(0, dtype=np.intp)
    rejected = order[: hits[-1] + 1]
    rejected.sort()
    return rejected


def step_down(pvalues, critical_values) -> np.ndarray:
    """Generic step-down: reject the k* smallest, k* = max{k : p_(j) <= c_j for all j <= k}."""
    p = np.asarray(pvalues, dtype=np.float64)
    crit = np.asarray(critical_values, dtype=np.float64)
    if crit.shape != p.shape:
        raise ValueError("need exactly one critical value per p-value")
    order = np.argsort(p, kind="stable")
    ok = p[order] <= crit
    kstar = ok.size if ok.all() else int(np.argmin(ok))
    rejected = order[:kstar]
    rejected.sort()
    return rejected


def bh_critical_values(n: int, level: float) -> np.ndarray:
    return np.arange(1, n + 1) * (level / n)


def holm_critical_values(n: int, level: float) -> np.ndarray:
    return level / np.arange(n, 0, -1)


def lr_kfwer_critical_values(n: int, level: float, k: int) -> np.ndarray:
    i = np.arange(1, n + 1)
    return np.where(i <= k, k * level / n, k * level / (n + k - i))


def bh(pvalues, level: float) -> np.ndarray:
    """Benjamini-Hochberg step-up at the given level."""
    p = np.asarray(pvalues, dtype=np.float64)
    return step_up(p, bh_critical_values(p.size, level))


def holm(pvalues, level: float) -> np.ndarray:
    """Holm step-down at the given level."""
    p = np.asarray(pvalues, dtype=np.float64)
    return step_down(p, holm_critical_values(p.size, level))


def hochberg(pvalues, level: float) -> np.ndarray:
    """Hochberg step-up at the given level."""
    p = np.asarray(pvalues, dtype=np.float64)
    return step_up(p, holm_critical_values(p.size, level))


def two_stage_adaptive(pvalues, level: float) -> np.ndarray:
    """Two-stage adaptive FDR controller.

    Stage one runs BH at q' = level / (1 + level); the null count is then
    estimated as m0_hat = n - R1 and, unless m0_hat = 0 (reject everything),
    stage two reruns BH at (n / m0_hat) * q'.
    """
    p = np.asarray(pvalues, dtype=np.float64)
    q1 = level / (1.0 + level)
    r1 = bh(p, q1).size
    m0_hat = p.size - r1
    if m0_hat == 0:
        return np.arange(p.size, dtype=np.intp)
    return bh(p, q1 * p.size / m0_hat)


def lehmann_romano_kfwer(pvalues, level: float, k: int) -> np.ndarray:
    """Step-down control of the probability of k or more false rejections.

    Uses critical values k*level/n for ranks below k and k*level/(n+k-i)
    from rank k on; k = 1 recovers Holm exactly.
    """
    p = np.asarray(pvalues, dtype=np.float64)
    if not 1 <= k <= p.size:
        raise ValueError(f"k={k} out of range for {p.size} hypotheses")
    return step_down(p, lr_kfwer_critical_values(p.size, level, k))


@dataclass(frozen=True)
class Procedure:
    """A named within-family testing procedure.

    Parametric kinds (bonferroni, holm, hochberg, bh, two_stage, lr_kfwer)
    are applied at a caller-supplied level. The generic kinds step_up and
    step_down carry explicit critical values instead and cannot be re-leveled.
    """

    kind: str
    critical_values: tuple | None = None
    k: int | None = None

    def __post_init__(self):
        if self.kind not in PROCEDURE_KINDS:
            raise ValueError(f"unknown procedure kind {self.kind!r}")
        generic = self.kind in ("step_up", "step_down")
        if generic != (self.critical_values is not None):
            raise ValueError(
                "critical_values must be given exactly for step_up/step_down"
            )
        if self.critical_values is not None:
            crit = tuple(float(c) for c in self.critical_values)
            object.__setattr__(self, "critical_values", crit)
            arr = np.asarray(crit)
            if arr.size == 0 or np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ValueError("critical values must lie in [0, 1]")
            if np.any(np.diff(arr) < 0.0):
                raise ValueError("critical values must be nondecreasing")
        if (self.k is not None) != (self.kind == "lr_kfwer"):
            raise ValueError("k must be given exactly for lr_kfwer")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be a positive integer")

    @property
    def stepwise(self) -> str:
        """One of single-step / step-up / step-down / adaptive."""
        return _STEPWISE[self.kind]

    def apply(self, pvalues, level: float | None = None) -> np.ndarray:
        """Rejected index set when run at the given level."""
        p = np.asarray(pvalues, dtype=np.float64)
        if self.kind in ("step_up", "step_down"):
            if level is not None:
                raise ValueError(
                    f"{self.kind} carries fixed critical values and cannot be "
                    "applied at a level"
                )
            crit = np.asarray(self.critical_values)
            return step_up(p, crit) if self.kind == "step_up" else step_down(p, crit)
        if level is None:
            raise ValueError(f"a level is required for {self.kind}")
        if self.kind == "bonferroni":
            return bonferroni(p, level)
        if self.kind == "holm":
            return holm(p, level)
        if self.kind == "hochberg":
            return hochberg(p, level)
        if self.kind == "bh":
            return bh(p, level)
        if self.kind == "two_stage":
            return two_stage_adaptive(p, level)
        return lehmann_romano_kfwer(p, level, self.k)

    def thresholds(self, n: int, level: float | None = None) -> np.ndarray:
        """Every constant the rejection decision compares a p-value against.

        The R_min scan uses these as breakpoints so that its search over
        one family's summary value is exact.
        """
        if self.kind in ("step_up", "step_down"):
            return np.asarray(self.critical_values)
        if level is None:
            raise ValueError(f"a level is required for {self.kind}")
        if self.kind == "bonferroni":
            return np.array([level / n])
        if self.kind == "bh":
            return bh_critical_values(n, level)
        if self.kind in ("holm", "hochberg"):
            return holm_critical_values(n, level)
        if self.kind == "lr_kfwer":
            return lr_kfwer_critical_values(n, level, self.k)
        # two_stage: stage one compares against BH constants at q', stage two
        # against BH constants at (n/m0_hat)*q' for every possible m0_hat, so
        # all cutoffs have the form j*q'/d with j, d in 1..n.
        q1 = level / (1.0 + level)
        j = np.arange(1, n + 1, dtype=np.float64)
        return np.unique(np.outer(j, 1.0 / j)) * q1

    def describe(self) -> str:
        if self.kind == "lr_kfwer":
            return f"lr_kfwer:{self.k}"
        if self.kind in ("step_up", "step_down"):
            return f"{self.kind}[{len(self.critical_values)}]"
        return self.kind
