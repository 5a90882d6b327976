"""From-scratch learners: k-NN, soft-margin RBF SVM (SMO, one-vs-rest),
random decision forest (CART, Gini), and cross-validation ensembles.

All learners are deterministic given (data, params, seed); per-tree and
per-fold generators are derived from the master seed by index so results do
not depend on execution order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DataError

MODEL_FORMAT = "fastnose-model-1"


@dataclass
class Dataset:
    """Feature matrix with integer-encoded labels."""

    x: np.ndarray
    y: np.ndarray
    classes: tuple[str, ...]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] == 0:
            raise DataError("need a non-empty 2-d feature matrix")
        if not np.all(np.isfinite(self.x)):
            raise DataError("features contain NaN/Inf")
        if self.y.shape[0] != self.x.shape[0]:
            raise DataError("label/feature length mismatch")
        if np.any(self.y < 0) or np.any(self.y >= len(self.classes)):
            raise DataError("label outside class set")

    @property
    def n(self) -> int:
        return self.x.shape[0]


def balanced_class_weights(y: np.ndarray, n_classes: int) -> np.ndarray:
    """w_c = n / (|classes| * n_c); absent classes get weight 0."""
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    weights = np.zeros(n_classes)
    present = counts > 0
    weights[present] = y.shape[0] / (n_classes * counts[present])
    return weights


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


# ---------------------------------------------------------------------------
# k-nearest neighbours

class KnnClassifier:
    """Euclidean k-NN with majority vote.

    Equal distances keep training order (stable sort, lower index first);
    vote ties go to the class of the nearest neighbour among the tied classes.
    """

    kind = "knn"

    def __init__(self, k: int = 5):
        self.k = k
        self.x: np.ndarray | None = None
        self.y: np.ndarray | None = None
        self.classes: tuple[str, ...] = ()

    def fit(self, train: Dataset) -> "KnnClassifier":
        if train.n < self.k:
            raise DataError(f"k={self.k} exceeds {train.n} training points")
        self.x = train.x.copy()
        self.y = train.y.copy()
        self.classes = train.classes
        return self

    def decision_scores(self, x: np.ndarray) -> np.ndarray:
        """Vote fractions per class."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d = _pairwise_sq_dists(x, self.x)
        order = np.argsort(d, axis=1, kind="stable")[:, : self.k]
        scores = np.zeros((x.shape[0], len(self.classes)))
        for i in range(x.shape[0]):
            votes = np.bincount(self.y[order[i]], minlength=len(self.classes))
            scores[i] = votes / self.k
        return scores

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.x is None:
            raise DataError("classifier not fitted")
        d = _pairwise_sq_dists(x, self.x)
        order = np.argsort(d, axis=1, kind="stable")[:, : self.k]
        out = np.empty(x.shape[0], dtype=np.int64)
        for i in range(x.shape[0]):
            neigh = self.y[order[i]]
            votes = np.bincount(neigh, minlength=len(self.classes))
            best = votes.max()
            tied = np.flatnonzero(votes == best)
            if tied.shape[0] == 1:
                out[i] = tied[0]
            else:
                # nearest neighbour belonging to a tied class decides
                for lbl in neigh:
                    if lbl in tied:
                        out[i] = lbl
                        break
        return out


# ---------------------------------------------------------------------------
# RBF-kernel SVM via sequential minimal optimisation

@dataclass(frozen=True)
class SvmParams:
    c: float = 1e3
    gamma: float = 1e-4
    class_weight: str = "balanced"
    tol: float = 1e-3
    max_iter: int = 200_000


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * _pairwise_sq_dists(a, b))


def _smo_solve(
    k_mat: np.ndarray, y: np.ndarray, c_vec: np.ndarray, tol: float, max_iter: int
) -> tuple[np.ndarray, float, int]:
    """Max-violating-pair SMO on the dual; returns (alpha, bias, iterations).

    Maintains f_t = sum_j alpha_j y_j K_tj. The KKT gap is
    max_{I_up}(y_t - f_t) - min_{I_low}(y_t - f_t); at the optimum the bias is
    the midpoint of the two extrema.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    f = np.zeros(n)
    yf = y.astype(np.float64)

    for it in range(max_iter):
        up = ((yf > 0) & (alpha < c_vec)) | ((yf < 0) & (alpha > 0))
        low = ((yf > 0) & (alpha > 0)) | ((yf < 0) & (alpha < c_vec))
        crit = yf - f
        if not up.any() or not low.any():
            return alpha, 0.0, it
        i = int(np.flatnonzero(up)[np.argmax(crit[up])])
        j = int(np.flatnonzero(low)[np.argmin(crit[low])])
        gap = crit[i] - crit[j]
        if gap <= tol:
            bias = 0.5 * (crit[i] + crit[j])
            return alpha, float(bias), it
        eta = k_mat[i, i] + k_mat[j, j] - 2.0 * k_mat[i, j]
        if eta <= 1e-12:
            eta = 1e-12
        if yf[i] != yf[j]:
            lo = max(0.0, alpha[j] - alpha[i])
            hi = min(c_vec[j], c_vec[i] + alpha[j] - alpha[i])
        else:
            lo = max(0.0, alpha[i] + alpha[j] - c_vec[i])
            hi = min(c_vec[j], alpha[i] + alpha[j])
        aj_new = alpha[j] + yf[j] * (f[i] - yf[i] - (f[j] - yf[j])) / eta
        aj_new = min(max(aj_new, lo), hi)
        ai_new = alpha[i] + yf[i] * yf[j] * (alpha[j] - aj_new)
        di = (ai_new - alpha[i]) * yf[i]
        dj = (aj_new - alpha[j]) * yf[j]
        if di == 0.0 and dj == 0.0:
            bias = 0.5 * (crit[i] + crit[j])
            return alpha, float(bias), it
        f += di * k_mat[i] + dj * k_mat[j]
        alpha[i] = ai_new
        alpha[j] = aj_new

    up = ((yf > 0) & (alpha < c_vec)) | ((yf < 0) & (alpha > 0))
    low = ((yf > 0) & (alpha > 0)) | ((yf < 0) & (alpha < c_vec))
    crit = yf - f
    residual = float(crit[up].max() - crit[low].min())
    raise ConvergenceError(
        f"SMO did not reach tol={tol} within {max_iter} iterations "
        f"(KKT gap {residual:.3g})",
        residual=residual,
    )


class RbfSvmOvr:
    """One-vs-rest multiclass soft-margin SVM with an RBF kernel.

    Balanced class weights scale the box constraint per sample inversely to
    the frequency of the sample's (multiclass) label. Prediction is the argmax
    of the binary margins; exact ties resolve to the lower class index.
    """

    kind = "svm_ovr"

    def __init__(self, params: SvmParams = SvmParams()):
        self.params = params
        self.sv: np.ndarray | None = None
        self.dual: np.ndarray | None = None  # (n_classes, n_sv): alpha * y
        self.bias: np.ndarray | None = None
        self.classes: tuple[str, ...] = ()

    def fit(self, train: Dataset) -> "RbfSvmOvr":
        n_classes = len(train.classes)
        if np.unique(train.y).shape[0] < 2:
            raise DataError("SVM needs at least two classes present")
        p = self.params
        k_mat = rbf_kernel(train.x, train.x, p.gamma)
        if p.class_weight == "balanced":
            w = balanced_class_weights(train.y, n_classes)
        else:
            w = np.ones(n_classes)
        c_samples = p.c * w[train.y]
        dual = np.zeros((n_classes, train.n))
        bias = np.zeros(n_classes)
        for cls in range(n_classes):
            y = np.where(train.y == cls, 1.0, -1.0)
            if np.all(y < 0):
                continue
            alpha, b, _ = _smo_solve(k_mat, y, c_samples, p.tol, p.max_iter)
            dual[cls] = alpha * y
            bias[cls] = b
        keep = np.flatnonzero(np.any(dual != 0.0, axis=0))
        self.sv = train.x[keep].copy()
        self.dual = dual[:, keep]
        self.bias = bias
        self.classes = train.classes
        return self

    def decision_scores(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        k = rbf_kernel(x, self.sv, self.params.gamma)
        return k @ self.dual.T + self.bias[None, :]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision_scores(x), axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# Random decision forest (CART with Gini impurity)

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    class_weight: str = "balanced"
    max_depth: int = 0  # 0 = unlimited
    features_per_split: str = "sqrt"
    seed: int = 0


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray
    oob: np.ndarray  # bool mask of out-of-bag training samples

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[0], dtype=np.int64)
        for i in range(x.shape[0]):
            node = 0
            while self.feature[node] >= 0:
                if x[i, self.feature[node]] < self.threshold[node]:
                    node = self.left[node]
                else:
                    node = self.right[node]
            out[i] = self.leaf_class[node]
        return out


def _gini(weighted_counts: np.ndarray) -> float:
    total = weighted_counts.sum()
    if total <= 0:
        return 0.0
    p = weighted_counts / total
    return 1.0 - float(np.sum(p * p))


def _grow_tree(
    x: np.ndarray,
    y: np.ndarray,
    sample_w: np.ndarray,
    n_classes: int,
    max_depth: int,
    n_feat_split: int,
    rng: np.random.Generator,
) -> _Tree:
    feature, threshold, left, right, leaf = [], [], [], [], []

    def leaf_label(idx) -> int:
        counts = np.zeros(n_classes)
        np.add.at(counts, y[idx], sample_w[idx])
        return int(np.argmax(counts))

    def build(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf.append(leaf_label(idx))
        labels = y[idx]
        if (
            idx.shape[0] < 2
            or (max_depth > 0 and depth >= max_depth)
            or np.all(labels == labels[0])
        ):
            return node
        feats = rng.choice(x.shape[1], size=n_feat_split, replace=False)
        best = (np.inf, -1, 0.0)
        total_counts = np.zeros(n_classes)
        np.add.at(total_counts, labels, sample_w[idx])
        for fidx in feats:
            vals = x[idx, fidx]
            order = np.argsort(vals, kind="stable")
            sv, so = vals[order], idx[order]
            lc = np.zeros(n_classes)
            for pos in range(sv.shape[0] - 1):
                lc[y[so[pos]]] += sample_w[so[pos]]
                if sv[pos + 1] <= sv[pos]:
                    continue
                rc = total_counts - lc
                wl, wr = lc.sum(), rc.sum()
                cost = (wl * _gini(lc) + wr * _gini(rc)) / (wl + wr)
                if cost < best[0] - 1e-15:
                    best = (cost, int(fidx), 0.5 * (sv[pos] + sv[pos + 1]))
        if best[1] < 0:
            return node
        fidx, thr = best[1], best[2]
        mask = x[idx, fidx] < thr
        feature[node] = fidx
        threshold[node] = thr
        left[node] = build(idx[mask], depth + 1)
        right[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(x.shape[0]), 0)
    return _Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        leaf_class=np.asarray(leaf, dtype=np.int64),
        oob=np.zeros(0, dtype=bool),
    )


class RandomForest:
    """Bootstrap ensemble of CART trees; sqrt(d) features per split."""

    kind = "forest"

    def __init__(self, params: ForestParams = ForestParams()):
        self.params = params
        self.trees: list[_Tree] = []
        self.classes: tuple[str, ...] = ()

    def fit(self, train: Dataset) -> "RandomForest":
        p = self.params
        n_classes = len(train.classes)
        if p.class_weight == "balanced":
            w = balanced_class_weights(train.y, n_classes)
        else:
            w = np.ones(n_classes)
        sample_w = w[train.y]
        d = train.x.shape[1]
        if p.features_per_split == "sqrt":
            n_feat = max(1, int(round(np.sqrt(d))))
        elif p.features_per_split == "all":
            n_feat = d
        else:
            n_feat = min(d, int(p.features_per_split))
        self.trees = []
        for t in range(p.n_trees):
            rng = np.random.default_rng(np.random.SeedSequence((p.seed, t)))
            boot = rng.integers(0, train.n, size=train.n)
            tree = _grow_tree(
                train.x[boot], train.y[boot], sample_w[boot], n_classes,
                p.max_depth, n_feat, rng,
            )
            oob = np.ones(train.n, dtype=bool)
            oob[boot] = False
            tree.oob = oob
            self.trees.append(tree)
        self.classes = train.classes
        return self

    def vote_counts(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        counts = np.zeros((x.shape[0], len(self.classes)), dtype=np.int64)
        for tree in self.trees:
            pred = tree.predict(x)
            counts[np.arange(x.shape[0]), pred] += 1
        return counts

    def decision_scores(self, x: np.ndarray) -> np.ndarray:
        return self.vote_counts(x) / len(self.trees)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.vote_counts(x), axis=1).astype(np.int64)

    def oob_accuracy(self, train: Dataset) -> float:
        counts = np.zeros((train.n, len(self.classes)), dtype=np.int64)
        for tree in self.trees:
            idx = np.flatnonzero(tree.oob)
            if idx.shape[0] == 0:
                continue
            pred = tree.predict(train.x[idx])
            counts[idx, pred] += 1
        covered = counts.sum(axis=1) > 0
        pred = np.argmax(counts[covered], axis=1)
        return float(np.mean(pred == train.y[covered]))


# ---------------------------------------------------------------------------
# Stratified cross-validation ensemble

@dataclass
class EnsembleModel:
    """Majority vote over per-fold models.

    Ties break by summed decision confidence across fold models, then by
    class order.
    """

    models: list
    classes: tuple[str, ...]
    fold_scores: list[float] = field(default_factory=list)
    seed: int = 0

    def decision_scores(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        total = np.zeros((x.shape[0], len(self.classes)))
        for model in self.models:
            total += model.decision_scores(x)
        return total / len(self.models)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n_classes = len(self.classes)
        votes = np.zeros((x.shape[0], n_classes), dtype=np.int64)
        scores = np.zeros((x.shape[0], n_classes))
        for model in self.models:
            s = model.decision_scores(x)
            votes[np.arange(x.shape[0]), np.argmax(s, axis=1)] += 1
            scores += s
        out = np.empty(x.shape[0], dtype=np.int64)
        for i in range(x.shape[0]):
            best = votes[i].max()
            tied = np.flatnonzero(votes[i] == best)
            if tied.shape[0] == 1:
                out[i] = tied[0]
            else:
                out[i] = tied[int(np.argmax(scores[i, tied]))]
        return out


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per sample; class proportions within one sample per fold."""
    n_classes = int(y.max()) + 1 if y.shape[0] else 0
    counts = np.bincount(y, minlength=n_classes)
    small = [c for c in range(n_classes) if 0 < counts[c] < folds]
    if small:
        raise DataError(f"classes {small} have fewer members than folds={folds}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xF01D)))
    assignment = np.empty(y.shape[0], dtype=np.int64)
    offset = 0
    for cls in range(n_classes):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.shape[0])]
        assignment[idx] = (np.arange(idx.shape[0]) + offset) % folds
        offset += idx.shape[0] % folds
    return assignment


def cv_ensemble(
    train: Dataset, learner_factory, folds: int = 5, seed: int = 0
) -> EnsembleModel:
    """Train one model per stratified fold and bundle them as a voting ensemble.

    folds=1 degenerates to a single model trained on all data.
    """
    if folds < 1:
        raise DataError("folds must be >= 1")
    if folds == 1:
        model = learner_factory(0).fit(train)
        return EnsembleModel(models=[model], classes=train.classes, fold_scores=[], seed=seed)
    assignment = stratified_folds(train.y, folds, seed)
    models, scores = [], []
    for fold in range(folds):
        mask = assignment != fold
        sub = Dataset(train.x[mask], train.y[mask], train.classes)
        model = learner_factory(fold).fit(sub)
        val = Dataset(train.x[~mask], train.y[~mask], train.classes)
        acc = float(np.mean(model.predict(val.x) == val.y))
        models.append(model)
        scores.append(acc)
    return EnsembleModel(models=models, classes=train.classes, fold_scores=scores, seed=seed)


# ---------------------------------------------------------------------------
# Model persistence (versioned npz; round-trip is bit-exact)

def _flatten(model, prefix: str, arrays: dict, meta: dict) -> None:
    if isinstance(model, EnsembleModel):
        meta[prefix] = {
            "kind": "ensemble",
            "classes": list(model.classes),
            "fold_scores": model.fold_scores,
            "seed": model.seed,
            "n_models": len(model.models),
        }
        for i, m in enumerate(model.models):
            _flatten(m, f"{prefix}/m{i}", arrays, meta)
    elif isinstance(model, RbfSvmOvr):
        meta[prefix] = {
            "kind": "svm_ovr",
            "classes": list(model.classes),
            "params": vars(model.params) | {},
        }
        arrays[f"{prefix}/sv"] = model.sv
        arrays[f"{prefix}/dual"] = model.dual
        arrays[f"{prefix}/bias"] = model.bias
    elif isinstance(model, RandomForest):
        meta[prefix] = {
            "kind": "forest",
            "classes": list(model.classes),
            "params": vars(model.params) | {},
            "n_trees": len(model.trees),
        }
        for i, tree in enumerate(model.trees):
            for name in ("feature", "threshold", "left", "right", "leaf_class", "oob"):
                arrays[f"{prefix}/t{i}/{name}"] = getattr(tree, name)
    elif isinstance(model, KnnClassifier):
        meta[prefix] = {"kind": "knn", "classes": list(model.classes), "k": model.k}
        arrays[f"{prefix}/x"] = model.x
        arrays[f"{prefix}/y"] = model.y
    else:
        raise DataError(f"cannot serialise {type(model).__name__}")


def _unflatten(prefix: str, arrays: dict, meta: dict):
    info = meta[prefix]
    kind = info["kind"]
    classes = tuple(info["classes"])
    if kind == "ensemble":
        models = [_unflatten(f"{prefix}/m{i}", arrays, meta) for i in range(info["n_models"])]
        return EnsembleModel(
            models=models, classes=classes,
            fold_scores=list(info["fold_scores"]), seed=info["seed"],
        )
    if kind == "svm_ovr":
        model = RbfSvmOvr(SvmParams(**info["params"]))
        model.sv = arrays[f"{prefix}/sv"]
        model.dual = arrays[f"{prefix}/dual"]
        model.bias = arrays[f"{prefix}/bias"]
        model.classes = classes
        return model
    if kind == "forest":
        model = RandomForest(ForestParams(**info["params"]))
        model.trees = [
            _Tree(
                feature=arrays[f"{prefix}/t{i}/feature"],
                threshold=arrays[f"{prefix}/t{i}/threshold"],
                left=arrays[f"{prefix}/t{i}/left"],
                right=arrays[f"{prefix}/t{i}/right"],
                leaf_class=arrays[f"{prefix}/t{i}/leaf_class"],
                oob=arrays[f"{prefix}/t{i}/oob"],
            )
            for i in range(info["n_trees"])
        ]
        model.classes = classes
        return model
    if kind == "knn":
        model = KnnClassifier(k=info["k"])
        model.x = arrays[f"{prefix}/x"]
        model.y = arrays[f"{prefix}/y"]
        model.classes = classes
        return model
    raise DataError(f"unknown model kind {kind!r}")


def save_model(path, model, extra_meta: dict | None = None) -> None:
    arrays: dict = {}
    meta: dict = {"format": MODEL_FORMAT}
    if extra_meta:
        meta["extra"] = extra_meta
    _flatten(model, "root", arrays, meta)
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(bytes(arrays.pop("__meta__")).decode())
    if meta.get("format") != MODEL_FORMAT:
        raise DataError(f"unsupported model format in {path}")
    model = _unflatten("root", arrays, meta)
    return model, meta.get("extra", {})
