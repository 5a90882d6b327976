import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as scipy_stats

from fastnose.errors import DataError
from fastnose.evaluation import (
    LabelingParams,
    PredictionTimeline,
    balanced_accuracy,
    balanced_accuracy_multiclass,
    chi2_randomization,
    chi2_sf,
    label_feature,
    modal_nonblank,
    onset_offset,
    trial_accuracy,
)

PAPER_PARAMS = LabelingParams(t_onset_ms=0.0, t_offset_ms=1000.0, odour="IA")


class TestLabeling:
    def test_paper_examples(self):
        assert label_feature(500, PAPER_PARAMS) == "IA"
        assert label_feature(980, PAPER_PARAMS) == "rejected"
        assert label_feature(1010, PAPER_PARAMS) == "blank"

    def test_exhaustive_region_sweep(self):
        # boundaries: odour on [0, 960), rejected on [-inf, 0) and
        # [960, 1010), blank on [1010, inf)
        for t in range(-100, 2001):
            label = label_feature(t, PAPER_PARAMS)
            if 0 <= t < 960:
                assert label == "IA", t
            elif t >= 1010:
                assert label == "blank", t
            else:
                assert label == "rejected", t

    def test_blank_stimulus_labels_blank(self):
        params = LabelingParams(0.0, 1000.0, "blank2")
        assert label_feature(500, params) == "blank"

    @settings(max_examples=100, deadline=None)
    @given(st.integers(-5000, 5000))
    def test_partition_property(self, t):
        # every window start gets exactly one of the three labels
        assert label_feature(t, PAPER_PARAMS) in ("IA", "blank", "rejected")


def make_timeline(labels, start=0):
    t = np.arange(start, start + 50 * len(labels), 50)
    return PredictionTimeline(t_ms=t, labels=list(labels), trial_id="t0")


class TestOnsetOffset:
    def test_all_blank_undefined(self):
        tl = make_timeline(["blank"] * 10)
        on, off = onset_offset(tl, 0, 300)
        assert on is None
        assert off is not None  # first blank after offset exists

    def test_perfect_timeline_within_one_pitch(self):
        labels = ["IA"] * 20 + ["blank"] * 20
        tl = make_timeline(labels)
        on, off = onset_offset(tl, 0, 1000)
        assert on == 0.0
        assert 0 < off <= 50.0

    def test_multiples_of_pitch(self):
        labels = ["blank", "IA", "IA", "blank", "blank"]
        tl = make_timeline(labels)
        on, off = onset_offset(tl, 0, 100)
        assert on % 50 == 0
        assert off % 50 == 0


class TestTrialAccuracy:
    def test_all_correct(self):
        tls = [make_timeline(["IA"] * 5), make_timeline(["EB"] * 5)]
        res = trial_accuracy(tls, ["IA", "EB"])
        assert res.accuracy == 1.0

    def test_modal_rule(self):
        tl = make_timeline(["IA", "IA", "IA", "EB", "EB"])
        res = trial_accuracy([tl], ["IA"])
        assert res.accuracy == 1.0

    def test_modal_tie_breaks_to_earliest(self):
        tl = make_timeline(["EB", "IA", "IA", "EB"])
        assert modal_nonblank(tl) == "EB"

    def test_zero_nonblank_flagged_as_miss(self):
        tl = make_timeline(["blank"] * 4)
        res = trial_accuracy([tl], ["IA"])
        assert res.accuracy == 0.0
        assert res.flagged_trials == ["t0"]

    def test_uniform_predictions_chance_level(self):
        rng = np.random.default_rng(0)
        classes = ["IA", "EB", "Eu", "2H"]
        tls, truths = [], []
        for i in range(400):
            tls.append(make_timeline(rng.choice(classes, size=1).tolist()))
            truths.append(classes[i % 4])
        res = trial_accuracy(tls, truths)
        assert abs(res.accuracy - 0.25) < 0.07


class TestBalancedAccuracy:
    def test_perfect(self):
        assert balanced_accuracy(10, 10, 10, 10) == 1.0

    def test_all_lick_strategy(self):
        assert balanced_accuracy(10, 10, 0, 10) == 0.5

    def test_arithmetic(self):
        assert balanced_accuracy(8, 10, 6, 10) == pytest.approx(0.7)

    def test_zero_denominator_rejected(self):
        with pytest.raises(DataError):
            balanced_accuracy(1, 0, 1, 5)

    def test_equals_plain_accuracy_when_balanced(self):
        # with S+ = S-, balanced accuracy equals plain accuracy
        s = 20
        for hits in (0, 7, 13, 20):
            for crs in (0, 5, 20):
                plain = (hits + crs) / (2 * s)
                assert balanced_accuracy(hits, s, crs, s) == pytest.approx(plain)

    def test_multiclass_mean_recall(self):
        conf = np.array([[8, 2, 0], [1, 9, 0], [5, 0, 5]])
        assert balanced_accuracy_multiclass(conf) == pytest.approx((0.8 + 0.9 + 0.5) / 3)


class TestChi2:
    def test_uniform_table_p_one(self):
        classes = ["a", "b"] * 50
        onsets = np.concatenate([
            np.linspace(0, 3.6e6 - 1, 50), np.linspace(0, 3.6e6 - 1, 50),
            np.linspace(3.6e6, 7.2e6 - 1, 50), np.linspace(3.6e6, 7.2e6 - 1, 50),
        ])[: len(classes)]
        classes = ["a"] * 50 + ["b"] * 50
        onsets = np.concatenate([
            np.linspace(0, 7.2e6 - 1, 25), np.linspace(0, 7.2e6 - 1, 25),
        ] * 2)
        p, stat, dof = chi2_randomization(classes, onsets)
        assert stat == pytest.approx(0.0, abs=1e-9)
        assert p == pytest.approx(1.0)

    def test_extreme_dependence(self):
        classes = ["a"] * 50 + ["b"] * 50
        onsets = np.concatenate([np.full(50, 1e5), np.full(50, 4e6)])
        p, _, _ = chi2_randomization(classes, onsets)
        assert p < 1e-6

    def test_sf_matches_scipy(self):
        for dof in (1, 2, 5, 10, 40):
            for s in (0.0, 0.3, 1.7, 9.0, 35.0, 120.0):
                assert chi2_sf(s, dof) == pytest.approx(
                    float(scipy_stats.chi2.sf(s, dof)), abs=1e-12
                )

    def test_needs_two_classes_and_bins(self):
        with pytest.raises(DataError):
            chi2_randomization(["a"] * 10, np.linspace(0, 7e6, 10))
        with pytest.raises(DataError):
            chi2_randomization(["a", "b"] * 5, np.full(10, 100.0))

    def test_p_values_uniform_under_null(self):
        # p approximately uniform over random schedules (KS check)
        rng = np.random.default_rng(42)
        classes = np.array(["a", "b", "c", "d"]).repeat(30)
        onsets = np.linspace(0, 3 * 3.6e6 - 1, classes.shape[0])
        ps = []
        for _ in range(300):
            perm = rng.permutation(classes.shape[0])
            p, _, _ = chi2_randomization(list(classes[perm]), onsets)
            ps.append(p)
        d, ks_p = scipy_stats.kstest(ps, "uniform")
        assert ks_p > 0.01
