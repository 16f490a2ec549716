import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from famsel.core import PValueEnsemble
from famsel.procedures import Procedure
from famsel.selection import (
    GlobalNullTest,
    MinPThreshold,
    TopKMinP,
    UnsupportedRuleError,
    _r_min_scan,
    check_concordant,
    check_simple,
    combine,
    combined_pvalues,
    r_min,
    select,
)

mpmath.mp.dps = 40


def singleton_ensemble(values):
    return PValueEnsemble([[v] for v in values])


# the adaptive two-stage configuration where the selected count moves while
# the middle family stays selected: q' = 0.05/1.05, values in the regions
# (0, q'/3), (q'/3, 2q'/3), (3q'/2, 3q')
TWO_STAGE_RULE = GlobalNullTest("bonferroni_min", Procedure("two_stage"), level=0.05)
TWO_STAGE_ENSEMBLE = singleton_ensemble([0.01, 0.02, 0.10])


class TestCombine:
    def test_simes(self):
        assert combine("simes", [0.01, 0.04, 0.09]) == pytest.approx(0.03)

    def test_bonferroni_min(self):
        assert combine("bonferroni_min", [0.2, 0.3]) == pytest.approx(0.4)
        assert combine("bonferroni_min", [0.9, 0.9]) == 1.0

    def test_fisher_half_half(self):
        # chi-square(4) survival at -2*log(0.25) via the exact even-df sum
        stat = -2.0 * math.log(0.25)
        oracle = math.exp(-stat / 2.0) * (1.0 + stat / 2.0)
        assert oracle == pytest.approx(0.5966, abs=5e-5)
        assert combine("fisher", [0.5, 0.5]) == pytest.approx(oracle, rel=1e-12)

    def test_stouffer_symmetry(self):
        assert combine("stouffer", [0.5, 0.5]) == pytest.approx(0.5)
        assert combine("stouffer", [0.1, 0.9]) == pytest.approx(0.5)

    def test_zero_and_one_pvalues_stay_finite(self):
        for kind in ("bonferroni_min", "simes", "fisher", "stouffer"):
            for p in ([0.0, 0.5], [1.0, 1.0], [0.0, 1.0]):
                value = combine(kind, p)
                assert 0.0 <= value <= 1.0

    def test_floor_is_configurable(self):
        tight = combine("fisher", [1e-200, 0.5], floor=1e-10)
        loose = combine("fisher", [1e-200, 0.5], floor=1e-300)
        assert loose < tight

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            combine("simes", [])

    def test_unknown_combiner(self):
        with pytest.raises(ValueError):
            combine("tippett", [0.1])

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=10))
    def test_output_in_unit_interval(self, pvals):
        for kind in ("bonferroni_min", "simes", "fisher", "stouffer"):
            assert 0.0 <= combine(kind, pvals) <= 1.0

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(5)
        rows = rng.uniform(size=(50, 4))
        ens = PValueEnsemble(rows)
        for kind in ("bonferroni_min", "simes", "fisher", "stouffer"):
            batch = combined_pvalues(kind, ens)
            each = np.array([combine(kind, row) for row in rows])
            assert np.array_equal(batch, each)


class TestSurvivalFunctionAccuracy:
    """The scipy-backed tails agree with independent high-precision oracles."""

    def test_chi_square_even_df_against_poisson_sum(self):
        # for df = 2k the survival function is exp(-x/2) * sum_{j<k} (x/2)^j / j!
        for k in (1, 2, 3, 5, 10):
            for x in (1e-6, 0.5, 2.7726, 10.0, 30.0, 80.0):
                half = mpmath.mpf(x) / 2
                oracle = mpmath.exp(-half) * mpmath.nsum(
                    lambda j: half**j / mpmath.factorial(j), [0, k - 1]
                )
                got = special.chdtrc(2 * k, x)
                assert abs(got - float(oracle)) <= 1e-12 * float(oracle)

    def test_normal_tail_against_erfc(self):
        for z in (-8.0, -3.0, -1.0, 0.0, 0.5, 1.6449, 3.0, 8.0):
            oracle = mpmath.erfc(mpmath.mpf(z) / mpmath.sqrt(2)) / 2
            got = special.ndtr(-z)
            assert abs(got - float(oracle)) <= 1e-12 * float(oracle)

    def test_normal_quantile_roundtrip(self):
        for p in (1e-300, 1e-12, 0.01, 0.5, 0.99, 1 - 1e-12):
            z = special.ndtri(p)
            assert special.ndtr(z) == pytest.approx(p, rel=1e-10)


class TestSelect:
    ENSEMBLE = PValueEnsemble(
        [[0.01, 0.6, 0.7], [0.2, 0.5, 0.9], [0.04, 0.3, 0.8]]
    )

    def test_min_p_threshold(self):
        out = select(MinPThreshold(0.05), self.ENSEMBLE)
        assert out.selected == {0, 2} and out.r == 2

    def test_top_k(self):
        out = select(TopKMinP(2), self.ENSEMBLE)
        assert out.selected == {0, 2}

    def test_top_k_selects_all_when_k_equals_m(self):
        assert select(TopKMinP(3), self.ENSEMBLE).r == 3

    def test_top_k_ties_take_lower_index(self):
        ens = PValueEnsemble([[0.2], [0.1], [0.1], [0.1]])
        assert select(TopKMinP(2), ens).selected == {1, 2}

    def test_top_k_larger_than_m(self):
        with pytest.raises(ValueError):
            select(TopKMinP(4), self.ENSEMBLE)

    def test_global_null_bh(self):
        ens = singleton_ensemble([0.01, 0.02, 0.9])
        rule = GlobalNullTest("simes", Procedure("bh"), level=0.05)
        # BH on the combined values (0.01, 0.02, 0.9): two smallest rejected
        assert select(rule, ens).selected == {0, 1}

    def test_threshold_boundary_selects(self):
        ens = PValueEnsemble([[0.05], [0.06]])
        assert select(MinPThreshold(0.05), ens).selected == {0}

    def test_rule_validation(self):
        with pytest.raises(ValueError):
            MinPThreshold(0.0)
        with pytest.raises(ValueError):
            TopKMinP(0)
        with pytest.raises(ValueError):
            GlobalNullTest("median", Procedure("bh"), level=0.05)
        with pytest.raises(ValueError):
            GlobalNullTest("simes", Procedure("bh"), level=1.5)

    @given(st.data())
    def test_decreasing_own_pvalue_keeps_family_selected(self, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 10**6)))
        pvals = rng.uniform(size=(5, 3))
        ens = PValueEnsemble(pvals)
        for rule in (
            MinPThreshold(0.5),
            GlobalNullTest("simes", Procedure("bh"), level=0.5),
        ):
            before = select(rule, ens).selected
            if not before:
                continue
            i = sorted(before)[0]
            lowered = pvals.copy()
            lowered[i] = lowered[i] * data.draw(st.floats(0.0, 1.0))
            after = select(rule, PValueEnsemble(lowered)).selected
            assert i in after


class TestRMin:
    def test_simple_rules_shortcut_to_r(self):
        ens = PValueEnsemble(np.random.default_rng(1).uniform(size=(6, 3)))
        for rule in (
            MinPThreshold(0.9),
            TopKMinP(4),
            GlobalNullTest("simes", Procedure("bh"), level=0.5),
            GlobalNullTest("fisher", Procedure("holm"), level=0.5),
        ):
            out = select(rule, ens)
            for i in sorted(out.selected):
                assert r_min(rule, ens, i) == out.r

    def test_two_stage_drops_to_two(self):
        out = select(TWO_STAGE_RULE, TWO_STAGE_ENSEMBLE)
        assert out.selected == {0, 1, 2}
        assert r_min(TWO_STAGE_RULE, TWO_STAGE_ENSEMBLE, 1) == 2

    def test_unselected_family_rejected(self):
        ens = singleton_ensemble([0.001, 0.9])
        with pytest.raises(ValueError, match="not selected"):
            r_min(MinPThreshold(0.05), ens, 1)

    def test_non_summary_rule_refused(self):
        class OpaqueRule:
            def select(self, ensemble):
                return [0]

        with pytest.raises(UnsupportedRuleError):
            r_min(OpaqueRule(), TWO_STAGE_ENSEMBLE, 0)

    def _grid_r_min(self, rule, summaries, i, points=1000):
        # brute-force oracle: sweep the summary over a uniform grid
        best = None
        work = summaries.copy()
        for s in np.linspace(0.0, 1.0, points):
            work[i] = s
            picked = rule.select_from_summaries(work)
            if (picked == i).any() and (best is None or picked.size < best):
                best = int(picked.size)
        return best

    def test_scan_matches_grid_oracle(self):
        rng = np.random.default_rng(77)
        procedures = [
            Procedure("bh"),
            Procedure("holm"),
            Procedure("bonferroni"),
            Procedure("two_stage"),
        ]
        checked = 0
        for case in range(120):
            m = int(rng.integers(2, 7))
            rule = GlobalNullTest(
                "simes",
                procedures[case % len(procedures)],
                level=float(rng.uniform(0.1, 0.5)),
            )
            summaries = rng.uniform(size=m)
            for i in range(m):
                scan = _r_min_scan(rule, summaries, i)
                grid = self._grid_r_min(rule, summaries, i)
                if grid is not None:
                    assert scan == grid, (case, i, summaries)
                    checked += 1
        assert checked > 300


class TestCheckSimple:
    def test_min_p_has_no_witness(self):
        ens = PValueEnsemble(np.random.default_rng(3).uniform(size=(5, 3)))
        rule = MinPThreshold(0.9)
        for i in sorted(select(rule, ens).selected):
            assert not check_simple(rule, ens, i, 500, seed=9).witness_found

    def test_step_up_selection_has_no_witness(self):
        ens = PValueEnsemble(np.random.default_rng(4).uniform(size=(5, 3)) ** 2)
        rule = GlobalNullTest("simes", Procedure("bh"), level=0.3)
        out = select(rule, ens)
        assert out.r > 0
        for i in sorted(out.selected):
            assert not check_simple(rule, ens, i, 500, seed=9).witness_found

    def test_two_stage_witness_found(self):
        report = check_simple(TWO_STAGE_RULE, TWO_STAGE_ENSEMBLE, 1, 10**4, seed=5)
        assert report.witness_found
        assert (report.r_observed, report.r_witness) == (3, 2)
        # the witness replacement indeed reproduces the count change
        witness = TWO_STAGE_ENSEMBLE.families.copy()
        witness[1] = report.replacement
        out = select(TWO_STAGE_RULE, PValueEnsemble(witness))
        assert 1 in out.selected and out.r == 2

    def test_requires_selected_family(self):
        ens = singleton_ensemble([0.001, 0.9])
        with pytest.raises(ValueError, match="not selected"):
            check_simple(MinPThreshold(0.05), ens, 1, 10)


class TestCheckConcordant:
    def test_concordant_rules_have_no_witness(self):
        ens = PValueEnsemble(np.random.default_rng(8).uniform(size=(5, 3)) ** 2)
        for rule in (
            MinPThreshold(0.3),
            TopKMinP(3),
            GlobalNullTest("simes", Procedure("bh"), level=0.3),
            GlobalNullTest("bonferroni_min", Procedure("holm"), level=0.3),
        ):
            report = check_concordant(rule, ens, 300, seed=11)
            assert not report.witness_found, rule

    def test_discordant_rule_is_caught(self):
        class PanicRule:
            """Selects everything once any summary looks large."""

            is_simple = False

            def summaries(self, ensemble):
                return ensemble.min_p()

            def summary_of(self, pvalues):
                return float(np.min(pvalues))

            def select_from_summaries(self, summaries):
                if (summaries >= 0.9).any():
                    return np.arange(summaries.size)
                return np.flatnonzero(summaries <= 0.1)

            def summary_thresholds(self, m):
                return np.array([0.1, 0.9])

        ens = PValueEnsemble([[0.05], [0.5], [0.5], [0.5]])
        report = check_concordant(PanicRule(), ens, 400, seed=2)
        assert report.witness_found
        assert report.r_min_after > report.r_min_before


class TestCombinerValidity:
    """Combined values are valid p-values under the all-null ensemble."""

    @pytest.mark.parametrize("kind", ["bonferroni_min", "simes", "fisher", "stouffer"])
    def test_uniform_dominance(self, kind):
        rng = np.random.default_rng(99)
        rows = rng.uniform(size=(20000, 5))
        values = combined_pvalues(kind, PValueEnsemble(rows))
        for alpha in (0.01, 0.05, 0.1):
            hit = (values <= alpha).astype(float)
            se = hit.std(ddof=1) / np.sqrt(hit.size)
            assert hit.mean() <= alpha + 3 * se
