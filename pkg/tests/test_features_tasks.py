import numpy as np
import pytest

from fastnose.dsp_features import write_phase_features
from fastnose.errors import DataError
from fastnose.features import (
    extract_phase_features,
    extract_spectral_features,
    labels_path,
    read_labels,
    write_labels,
)
from fastnose.sensor_physics import generate_sensor_params
from fastnose.tasks import (
    FeatureTable,
    significant_increase,
    split_trials,
    train_pulse,
    trend_nonincreasing,
)


class TestFeatureExtraction:
    def test_phase_windows_aligned_and_labeled(self, small_run_a):
        out, trials = small_run_a
        fs = extract_phase_features(out)
        assert all(r[2] % 50 == 0 for r in fs.rows)
        labels = {m["label"] for m in fs.labels}
        assert "rejected" in labels and "blank" in labels
        # rejected windows sit in the transition region of their trial
        for m in fs.labels:
            if m["label"] == "rejected":
                t = m["t_rel_ms"]
                assert t < 0 or m["duration_ms"] - 40 <= t < m["duration_ms"] + 10

    def test_digest_mismatch_refused(self, small_run_a, tmp_path):
        out, _ = small_run_a
        other = tmp_path / "other_params.csv"
        other.write_text(generate_sensor_params(seed=4242))
        with pytest.raises(DataError, match="digest"):
            extract_phase_features(out, params_path=other)

    def test_spectral_needs_constant_bank(self, small_run_a):
        out, _ = small_run_a
        with pytest.raises(DataError, match="constant-temperature"):
            extract_spectral_features(out)

    def test_spectral_sources(self, small_run_b):
        out, _ = small_run_b
        for source, dim in (("sensor", 12), ("t_hot", 12), ("pid", 3)):
            fs = extract_spectral_features(out, source=source)
            assert fs.rows[0][3].shape == (dim,)

    def test_labels_round_trip(self, small_run_a, tmp_path):
        out, _ = small_run_a
        fs = extract_phase_features(out)
        p = tmp_path / "f.csv"
        write_phase_features(p, fs.rows)
        write_labels(labels_path(p), fs.labels)
        table = FeatureTable.from_files(p)
        assert table.x.shape[0] == len(fs.rows)
        assert np.allclose(table.x, np.stack([r[3] for r in fs.rows]))
        assert table.meta == read_labels(labels_path(p))


class TestSplitHygiene:
    def test_windows_never_cross_split(self, small_run_a):
        # train/test split is by trial: no trial contributes windows to both
        out, _ = small_run_a
        table = FeatureTable.from_featureset(extract_phase_features(out))
        model, extra = train_pulse(table, seed=0)
        train_ids = set(extra["train_trials"])
        tm = table.trial_meta()
        test_ids = {t for t in tm if t not in train_ids}
        assert train_ids and test_ids
        assert not (train_ids & test_ids)

    def test_split_stratified_and_deterministic(self):
        trial_classes = {f"t{i:03d}": ("IA", "EB", "blank")[i % 3] for i in range(30)}
        a1, b1 = split_trials(trial_classes, 0.6, seed=5)
        a2, b2 = split_trials(trial_classes, 0.6, seed=5)
        assert a1 == a2 and b1 == b2
        for cls in ("IA", "EB", "blank"):
            n_train = sum(1 for t in a1 if trial_classes[t] == cls)
            assert n_train == 6  # 60% of 10


class TestTrendHelpers:
    def test_flat_with_noise_is_nonincreasing(self):
        rng = np.random.default_rng(0)
        groups = [list(0.6 + rng.normal(0, 0.05, 8)) for _ in range(5)]
        assert trend_nonincreasing(groups)

    def test_clear_rise_rejected(self):
        groups = [[0.5, 0.52], [0.7, 0.71], [0.9, 0.91]]
        assert not trend_nonincreasing(groups)

    def test_significant_increase_needs_margin(self):
        assert not significant_increase([0.5, 0.52, 0.48], [0.53, 0.49, 0.51])
        assert significant_increase([0.50, 0.50, 0.50], [0.90, 0.91, 0.89])


def _silhouette(x, labels):
    """Plain silhouette score (Euclidean), written from the definition."""
    labels = np.asarray(labels)
    d = np.sqrt(np.maximum(
        (x**2).sum(1)[:, None] + (x**2).sum(1)[None, :] - 2 * x @ x.T, 0.0
    ))
    scores = []
    for i in range(x.shape[0]):
        same = labels == labels[i]
        same[i] = False
        if not same.any():
            continue
        a = d[i, same].mean()
        b = min(d[i, labels == other].mean() for other in set(labels) if other != labels[i])
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


class TestPhaseLockInvariance:
    def test_odour_clusters_have_positive_silhouette(self, small_run_a):
        # same-phase features from different trials of one odour lie closer
        # together than features of different odours
        out, _ = small_run_a
        table = FeatureTable.from_featureset(extract_phase_features(out))
        keep, labels = [], []
        for i, m in enumerate(table.meta):
            if (m["duration_ms"] == 1000 and 500 <= m["t_rel_ms"] <= 900
                    and m["label"] not in ("rejected",)):
                keep.append(i)
                labels.append(m["label"])
        x = table.x[np.asarray(keep)]
        assert len(keep) >= 20
        assert _silhouette(x, labels) > 0.0


class TestBankSeparation:
    def test_protocol_b_regimes_disjoint(self, small_run_b):
        from fastnose.recordings import read_recording

        out, trials = small_run_b
        rec = read_recording(out / f"recording_{trials[0].trial_id}.csv")
        # constant bank holds ~400 C, cycled bank spans 150-400
        for s in (1, 2, 3, 4):
            th = rec.hot_channel(s)
            assert th.std() < 5.0 and abs(th.mean() - 400.0) < 5.0
        for s in (5, 6, 7, 8):
            th = rec.hot_channel(s)
            assert th.max() > 350.0 and th.min() < 200.0
        # phase features use the cycled bank only: 4 sensors x 50 samples
        table = FeatureTable.from_featureset(extract_phase_features(out))
        assert table.x.shape[1] == 200
        spec = extract_spectral_features(out)
        assert spec.rows[0][3].shape == (12,)

    def test_dft_features_track_20hz_train(self, small_run_b):
        out, trials = small_run_b
        fs = extract_spectral_features(out)
        meta = {m["feature_id"]: m for m in fs.labels}
        found = 0
        for fid, tid, t, vec in fs.rows:
            m = meta[fid]
            if m["mode"] == "single" or m["frequency_hz"] != 20.0:
                continue
            freqs = vec.reshape(4, 3)[:, 0]
            # most sensors lock the dominant peak onto the modulation rate
            found += int(np.sum(np.abs(freqs - 20.0) < 2.0) >= 2)
        assert found >= 1
