"""Benchmark task drivers: dynamic pulse classification, concentration
robustness, and the three temporal-structure tasks, wired from feature tables
to classifier ensembles and task metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifiers import (
    Dataset,
    EnsembleModel,
    ForestParams,
    KnnClassifier,
    RandomForest,
    RbfSvmOvr,
    SvmParams,
    cv_ensemble,
)
from .config import Config, load_config
from .dsp_features import read_feature_table
from .errors import DataError
from .evaluation import (
    PredictionTimeline,
    REJECTED,
    balanced_accuracy,
    balanced_accuracy_multiclass,
    onset_offset,
    trial_accuracy,
)
from .features import FeatureSet, labels_path, read_labels
from .olfactometer import BLANK, odour_class

TASK_FREQS = (2.0, 5.0, 10.0, 20.0, 40.0, 60.0)
PAIRWISE_REF_HZ = 20.0
WINDOW_MS = 50


@dataclass
class FeatureTable:
    """Feature matrix plus per-row metadata, the unit the tasks consume."""

    ids: list
    trial_ids: list
    t_ms: np.ndarray
    x: np.ndarray
    meta: list  # one dict per row (labels sidecar schema)

    @classmethod
    def from_featureset(cls, fs: FeatureSet) -> "FeatureTable":
        return cls(
            ids=[r[0] for r in fs.rows],
            trial_ids=[r[1] for r in fs.rows],
            t_ms=np.asarray([r[2] for r in fs.rows], dtype=np.int64),
            x=np.stack([r[3] for r in fs.rows]),
            meta=fs.labels,
        )

    @classmethod
    def from_files(cls, features_csv: str | Path) -> "FeatureTable":
        ids, trial_ids, t_ms, x = read_feature_table(features_csv)
        meta = read_labels(labels_path(features_csv))
        if [m["feature_id"] for m in meta] != ids:
            raise DataError("labels sidecar does not match feature table")
        return cls(ids=ids, trial_ids=trial_ids, t_ms=t_ms, x=x, meta=meta)

    def trial_meta(self) -> dict:
        out = {}
        for m in self.meta:
            out.setdefault(m["trial_id"], m)
        return out

    def select(self, mask: np.ndarray) -> "FeatureTable":
        idx = np.flatnonzero(mask)
        return FeatureTable(
            ids=[self.ids[i] for i in idx],
            trial_ids=[self.trial_ids[i] for i in idx],
            t_ms=self.t_ms[idx],
            x=self.x[idx],
            meta=[self.meta[i] for i in idx],
        )


def split_trials(
    trial_classes: dict, fraction: float, seed: int
) -> tuple[set, set]:
    """Stratified 60/40-style split by trial; windows never cross sides."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5197)))
    by_class: dict = {}
    for tid, cls in sorted(trial_classes.items()):
        by_class.setdefault(cls, []).append(tid)
    train, test = set(), set()
    for cls in sorted(by_class):
        tids = by_class[cls]
        order = rng.permutation(len(tids))
        n_train = int(round(fraction * len(tids)))
        n_train = min(max(n_train, 1), len(tids) - 1) if len(tids) > 1 else len(tids)
        for pos, k in enumerate(order):
            (train if pos < n_train else test).add(tids[k])
    return train, test


def _ml(cfg: Config | None) -> Config:
    return cfg or load_config()


# ---------------------------------------------------------------------------
# Dynamic pulse classification (SVM ensemble over phase-locked features)

def train_pulse(table: FeatureTable, cfg: Config | None = None, seed: int = 0):
    """SVM ensemble on labelled windows of the 1000 ms training pulses.

    Trials split 60/40 by trial (stratified per odour class); 'rejected'
    windows never enter the training set.
    """
    cfg = _ml(cfg)
    tm = table.trial_meta()
    train_pool = {
        tid: odour_class(m["odour_a"])
        for tid, m in tm.items()
        if m["duration_ms"] == 1000 and m["mode"] == "single"
    }
    if not train_pool:
        raise DataError("no 1000 ms single-pulse trials to train on")
    train_ids, _ = split_trials(train_pool, cfg.getfloat("ml", "train_fraction"), seed)
    classes = tuple(sorted({odour_class(m["odour_a"]) for m in tm.values()} | {BLANK}))
    keep = np.array(
        [
            (tid in train_ids) and (m["label"] != REJECTED)
            for tid, m in zip(table.trial_ids, table.meta)
        ]
    )
    sub = table.select(keep)
    y = np.array([classes.index(m["label"]) for m in sub.meta], dtype=np.int64)
    ds = Dataset(sub.x, y, classes)
    params = SvmParams(
        c=cfg.getfloat("ml", "svm_c"),
        gamma=cfg.getfloat("ml", "svm_gamma"),
        tol=cfg.getfloat("ml", "svm_tol"),
        max_iter=cfg.getint("ml", "svm_max_iter"),
    )
    folds = cfg.getint("ml", "cv_folds")
    ens = cv_ensemble(ds, lambda fold: RbfSvmOvr(params), folds=folds, seed=seed)
    extra = {
        "task": "pulse",
        "classes": list(classes),
        "train_trials": sorted(train_ids),
        "seed": seed,
    }
    return ens, extra


def predict_timelines(
    model: EnsembleModel, extra: dict, table: FeatureTable, trial_ids: list
) -> dict:
    """Per-trial prediction timelines over windows at/after the onset."""
    classes = extra["classes"]
    wanted = set(trial_ids)
    keep = np.array(
        [tid in wanted and m["t_rel_ms"] >= 0 for tid, m in zip(table.trial_ids, table.meta)]
    )
    sub = table.select(keep)
    if sub.x.shape[0] == 0:
        raise DataError("no windows for requested trials")
    pred = model.predict(sub.x)
    names = [classes[p] for p in pred]
    timelines: dict = {}
    for tid, t, name in zip(sub.trial_ids, sub.t_ms, names):
        timelines.setdefault(tid, []).append((int(t), name))
    out = {}
    for tid, items in timelines.items():
        items.sort()
        out[tid] = PredictionTimeline(
            t_ms=np.array([t for t, _ in items]),
            labels=[n for _, n in items],
            trial_id=tid,
        )
    return out


@dataclass
class PulseEvaluation:
    rows: list = field(default_factory=list)        # per-duration summaries
    confusions: dict = field(default_factory=dict)  # duration -> (classes, matrix)
    onsets: dict = field(default_factory=dict)      # duration -> list of ms
    offsets: dict = field(default_factory=dict)


def evaluate_pulse(
    model: EnsembleModel, extra: dict, table: FeatureTable, seed: int | None = None
) -> PulseEvaluation:
    """Duration sweep on held-out trials: accuracy, onset and offset times."""
    tm = table.trial_meta()
    train_ids = set(extra["train_trials"])
    seed = extra.get("seed", 0) if seed is None else seed
    test = {
        tid: m for tid, m in tm.items()
        if tid not in train_ids
        and m["mode"] == "single"
        and odour_class(m["odour_a"]) != BLANK
        and m["concentration_pct"] == 100
    }
    durations = sorted({m["duration_ms"] for m in test.values()})
    timelines = predict_timelines(model, extra, table, list(test))
    out = PulseEvaluation()
    for dur in durations:
        tids = sorted(tid for tid, m in test.items() if m["duration_ms"] == dur)
        tls = [timelines[t] for t in tids if t in timelines]
        truths = [odour_class(test[t]["odour_a"]) for t in tids if t in timelines]
        res = trial_accuracy(tls, truths)
        onsets, offsets = [], []
        for t in tids:
            if t not in timelines:
                continue
            m = test[t]
            on, off = onset_offset(timelines[t], m["onset_ms"], m["onset_ms"] + dur)
            if on is not None:
                onsets.append(on)
            if off is not None:
                offsets.append(off)
        out.confusions[dur] = (res.classes, res.confusion)
        out.onsets[dur] = onsets
        out.offsets[dur] = offsets
        out.rows.append(dict(
            task="pulse", gas_pair="", frequency_hz=0, seed=seed,
            accuracy=res.accuracy,
            balanced_accuracy=balanced_accuracy_multiclass(res.confusion),
            duration_ms=dur,
            onset_mean_ms=float(np.mean(onsets)) if onsets else float("nan"),
            onset_std_ms=float(np.std(onsets)) if onsets else float("nan"),
            offset_mean_ms=float(np.mean(offsets)) if offsets else float("nan"),
            offset_std_ms=float(np.std(offsets)) if offsets else float("nan"),
        ))
    return out


# ---------------------------------------------------------------------------
# Concentration robustness (k-NN over windows 500..1000 ms after onset)

def concentration_curve(
    table: FeatureTable, cfg: Config | None = None, seed: int = 0,
    window_rel_ms: tuple[int, int] = (500, 1000),
) -> list[dict]:
    """k-NN trained on full-concentration pulses, tested across concentrations.

    Trains (including blanks) on windows of 1000 ms pulses at 100%; tests on
    the same windows of reduced-concentration trials, blanks omitted. Window-
    level accuracy per concentration.
    """
    cfg = _ml(cfg)
    tm = table.trial_meta()
    in_win = (np.array([m["t_rel_ms"] for m in table.meta]) >= window_rel_ms[0]) & (
        np.array([m["t_rel_ms"] + WINDOW_MS for m in table.meta]) <= window_rel_ms[1]
    )
    pool = {
        tid: odour_class(m["odour_a"])
        for tid, m in tm.items()
        if m["duration_ms"] == 1000 and m["mode"] == "single"
        and m["concentration_pct"] == 100
    }
    train_ids, test100 = split_trials(pool, cfg.getfloat("ml", "train_fraction"), seed)
    classes = tuple(sorted(set(pool.values())))
    keep_train = np.array(
        [tid in train_ids for tid in table.trial_ids]
    ) & in_win
    sub = table.select(keep_train)
    y = np.array([classes.index(odour_class(m["odour_a"])) for m in sub.meta])
    knn = KnnClassifier(cfg.getint("ml", "knn_k")).fit(Dataset(sub.x, y, classes))

    rows = []
    for pct in (20, 40, 60, 80, 100):
        if pct == 100:
            tids = {t for t in test100 if odour_class(tm[t]["odour_a"]) != BLANK}
        else:
            tids = {
                tid for tid, m in tm.items()
                if m["mode"] == "single" and m["duration_ms"] == 1000
                and m["concentration_pct"] == pct
                and odour_class(m["odour_a"]) != BLANK
            }
        keep = np.array([t in tids for t in table.trial_ids]) & in_win
        sub = table.select(keep)
        if sub.x.shape[0] == 0:
            continue
        truth = np.array([classes.index(odour_class(m["odour_a"])) for m in sub.meta])
        pred = knn.predict(sub.x)
        rows.append(dict(
            task="concentration", gas_pair="", frequency_hz=0, seed=seed,
            accuracy=float(np.mean(pred == truth)),
            balanced_accuracy=float(np.mean(pred == truth)),
            concentration_pct=pct, n_windows=int(sub.x.shape[0]),
        ))
    return rows


# ---------------------------------------------------------------------------
# Temporal-structure tasks (forest ensembles over spectral triplets)

TEMPORAL_TASKS = ("freq", "freqpair", "corr")


def _pair_key(m: dict) -> str:
    return "-".join(sorted([m["odour_a"], m["odour_b"]]))


def _train_pair_sets(table: FeatureTable) -> dict:
    """Rows of pulse-train trials grouped by unordered gas pair."""
    groups: dict = {}
    for i, m in enumerate(table.meta):
        if m["mode"] not in ("correlated", "anti-correlated"):
            continue
        if m["frequency_hz"] not in TASK_FREQS:
            continue
        groups.setdefault(_pair_key(m), []).append(i)
    if not groups:
        raise DataError("no pulse-train trials in feature table")
    return groups


def _check_coverage(table: FeatureTable, label: str) -> None:
    have = {
        (_pair_key(m), m["frequency_hz"], m["mode"])
        for m in table.meta if m["mode"] != "single"
    }
    pairs = {p for p, _, _ in have}
    missing = [
        (p, f, mode)
        for p in sorted(pairs)
        for f in TASK_FREQS
        for mode in ("correlated", "anti-correlated")
        if (p, f, mode) not in have
    ]
    if missing:
        raise DataError(f"{label}: missing (pair, frequency, mode) combinations: {missing}")


def train_temporal(
    table: FeatureTable, task: str, cfg: Config | None = None, seed: int = 0
) -> dict:
    """Per-gas-pair forest ensembles for one temporal task.

    Returns {pair: {subtask_key: EnsembleModel}}; 'freq' and 'corr' have a
    single subtask per pair, 'freqpair' one binary model per f-vs-20 pairing.
    """
    if task not in TEMPORAL_TASKS:
        raise DataError(f"task must be one of {TEMPORAL_TASKS}")
    cfg = _ml(cfg)
    _check_coverage(table, "training features")
    groups = _train_pair_sets(table)
    folds = cfg.getint("ml", "cv_folds")
    fp = ForestParams(
        n_trees=cfg.getint("ml", "forest_trees"),
        max_depth=cfg.getint("ml", "forest_max_depth"),
    )

    def factory(fold_seed):
        return lambda fold: RandomForest(
            ForestParams(n_trees=fp.n_trees, max_depth=fp.max_depth,
                         seed=int(np.random.SeedSequence((seed, fold_seed, fold)).generate_state(1)[0]))
        )

    bundle: dict = {}
    for pair in sorted(groups):
        idx = np.asarray(groups[pair])
        metas = [table.meta[i] for i in idx]
        x = table.x[idx]
        models: dict = {}
        if task == "freq":
            classes = tuple(str(f) for f in TASK_FREQS)
            y = np.array([classes.index(str(m["frequency_hz"])) for m in metas])
            k = min(folds, int(np.bincount(y).min()))
            models["all"] = cv_ensemble(Dataset(x, y, classes), factory(0), k, seed)
        elif task == "corr":
            classes = ("anti-correlated", "correlated")
            y = np.array([classes.index(m["mode"]) for m in metas])
            k = min(folds, int(np.bincount(y).min()))
            models["all"] = cv_ensemble(Dataset(x, y, classes), factory(0), k, seed)
        else:
            for fi, f in enumerate(TASK_FREQS):
                if f == PAIRWISE_REF_HZ:
                    continue
                classes = (str(f), str(PAIRWISE_REF_HZ))
                mask = np.array([m["frequency_hz"] in (f, PAIRWISE_REF_HZ) for m in metas])
                y = np.array([classes.index(str(m["frequency_hz"]))
                              for m, keep in zip(metas, mask) if keep])
                # Desk-scale runs may have very few trials per frequency;
                # folds shrink to keep every class represented in each split.
                k = min(folds, int(np.bincount(y).min()))
                models[str(f)] = cv_ensemble(
                    Dataset(x[mask], y, classes), factory(fi + 1), k, seed
                )
        bundle[pair] = models
    return bundle


def evaluate_temporal(
    bundle: dict, table: FeatureTable, task: str, seed: int = 0
) -> list[dict]:
    """Held-out-experiment evaluation, per gas pair and per frequency."""
    if task not in TEMPORAL_TASKS:
        raise DataError(f"task must be one of {TEMPORAL_TASKS}")
    _check_coverage(table, "test features")
    groups = _train_pair_sets(table)
    rows = []
    for pair in sorted(groups):
        if pair not in bundle:
            raise DataError(f"model bundle lacks gas pair {pair}")
        idx = np.asarray(groups[pair])
        metas = [table.meta[i] for i in idx]
        x = table.x[idx]
        if task == "freq":
            model = bundle[pair]["all"]
            classes = model.classes
            truth = np.array([classes.index(str(m["frequency_hz"])) for m in metas])
            pred = model.predict(x)
            conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
            for t, p in zip(truth, pred):
                conf[t, p] += 1
            bal = balanced_accuracy_multiclass(conf)
            for ci, f in enumerate(classes):
                total = conf[ci].sum()
                if total == 0:
                    continue
                rows.append(dict(
                    task="freq", gas_pair=pair, frequency_hz=float(f), seed=seed,
                    accuracy=float(conf[ci, ci] / total), balanced_accuracy=bal,
                ))
        elif task == "corr":
            model = bundle[pair]["all"]
            classes = model.classes
            truth = np.array([classes.index(m["mode"]) for m in metas])
            pred = model.predict(x)
            freqs = np.array([m["frequency_hz"] for m in metas])
            for f in TASK_FREQS:
                mask = freqs == f
                if not mask.any():
                    continue
                t, p = truth[mask], pred[mask]
                acc = float(np.mean(t == p))
                s_plus = int(np.sum(t == 0))
                s_minus = int(np.sum(t == 1))
                hits = int(np.sum((t == 0) & (p == 0)))
                crs = int(np.sum((t == 1) & (p == 1)))
                bal = (
                    balanced_accuracy(hits, s_plus, crs, s_minus)
                    if s_plus >= 1 and s_minus >= 1 else acc
                )
                rows.append(dict(
                    task="corr", gas_pair=pair, frequency_hz=float(f), seed=seed,
                    accuracy=acc, balanced_accuracy=bal,
                ))
        else:
            for f in TASK_FREQS:
                if f == PAIRWISE_REF_HZ:
                    continue
                model = bundle[pair][str(f)]
                classes = model.classes
                mask = np.array([m["frequency_hz"] in (f, PAIRWISE_REF_HZ) for m in metas])
                t = np.array([classes.index(str(m["frequency_hz"]))
                              for m, keep in zip(metas, mask) if keep])
                p = model.predict(x[mask])
                acc = float(np.mean(t == p))
                s_plus = int(np.sum(t == 0))
                s_minus = int(np.sum(t == 1))
                hits = int(np.sum((t == 0) & (p == 0)))
                crs = int(np.sum((t == 1) & (p == 1)))
                bal = (
                    balanced_accuracy(hits, s_plus, crs, s_minus)
                    if s_plus >= 1 and s_minus >= 1 else acc
                )
                rows.append(dict(
                    task="freqpair", gas_pair=pair, frequency_hz=f, seed=seed,
                    accuracy=acc, balanced_accuracy=bal,
                ))
    return rows


def temporal_tasks(
    table_b: FeatureTable,
    table_c: FeatureTable,
    task: str,
    cfg: Config | None = None,
    seeds: range | list = range(10),
) -> list[dict]:
    """Train on experiment B, test on experiment C, repeated over seeds."""
    rows = []
    for seed in seeds:
        bundle = train_temporal(table_b, task, cfg, seed=int(seed))
        rows.extend(evaluate_temporal(bundle, table_c, task, seed=int(seed)))
    return rows


def significant_increase(a: list, b: list, n_sigma: float = 3.0) -> bool:
    """True when group b's mean exceeds group a's beyond combined noise.

    Used to verify non-increasing trends on finite noisy estimates: flat or
    noise-level wobble is compatible with 'non-increasing'; only a rise beyond
    ``n_sigma`` standard errors counts as a violation.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        return False
    diff = b.mean() - a.mean()
    if diff <= 0:
        return False
    se = math.sqrt(
        (a.var(ddof=1) / a.size if a.size > 1 else 0.0)
        + (b.var(ddof=1) / b.size if b.size > 1 else 0.0)
    )
    return diff > n_sigma * se


def trend_nonincreasing(groups: list[list], n_sigma: float = 3.0) -> bool:
    """Non-increasing trend over ordered groups of noisy samples.

    Checks every adjacent pair with :func:`significant_increase` and the
    least-squares slope of the group means against the group index (the slope
    must not be significantly positive).
    """
    for i in range(len(groups) - 1):
        if significant_increase(groups[i], groups[i + 1], n_sigma):
            return False
    means = np.array([np.mean(g) for g in groups if len(g)])
    if means.size >= 3:
        x = np.arange(means.size, dtype=np.float64)
        x = x - x.mean()
        slope = float(np.sum(x * (means - means.mean())) / np.sum(x * x))
        resid = means - (means.mean() + slope * x)
        se = math.sqrt(max(np.sum(resid**2), 1e-12) / max(means.size - 2, 1) / np.sum(x * x))
        if slope > n_sigma * se:
            return False
    return True


def summarize(rows: list[dict], keys: tuple[str, ...]) -> list[dict]:
    """Mean and SD of accuracy over seeds, grouped by ``keys`` (SD clipped so
    mean + sd never exceeds 1)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key in sorted(groups):
        accs = np.array([r["accuracy"] for r in groups[key]])
        bals = np.array([r["balanced_accuracy"] for r in groups[key]])
        mean = float(accs.mean())
        sd = float(accs.std())
        out.append(dict(
            **{k: v for k, v in zip(keys, key)},
            accuracy_mean=mean,
            accuracy_sd=min(sd, max(0.0, 1.0 - mean)) if mean + sd > 1.0 else sd,
            balanced_mean=float(bals.mean()),
            n=len(accs),
        ))
    return out


def write_result_rows(path: str | Path, rows: list[dict]) -> None:
    """Task result CSV: the pinned columns first, any extras after."""
    base = ["task", "gas_pair", "frequency_hz", "seed", "accuracy", "balanced_accuracy"]
    extras: list[str] = []
    for r in rows:
        for k in r:
            if k not in base and k not in extras:
                extras.append(k)
    cols = base + extras
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(str(r.get(k, "")) for k in cols) + "\n")


def write_confusion(path: str | Path, classes: tuple, matrix: np.ndarray) -> None:
    with open(path, "w") as fh:
        cols = list(classes) + (["none"] if matrix.shape[1] == len(classes) + 1 else [])
        fh.write("truth," + ",".join(cols) + "\n")
        for i, cls in enumerate(classes):
            fh.write(cls + "," + ",".join(str(int(v)) for v in matrix[i]) + "\n")
