"""Task metrics: training-window labeling, prediction timelines, onset/offset
extraction, class-balanced accuracy, confusion matrices, and the chi-square
randomisation check (with its own regularized-incomplete-gamma p-value).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .olfactometer import BLANK, odour_class

REJECTED = "rejected"
WINDOW_MS = 50


@dataclass(frozen=True)
class LabelingParams:
    """Parameters of the training-window labeling rule."""

    t_onset_ms: float
    t_offset_ms: float
    odour: str
    tau_ms: float = 50.0   # feature duration
    d_ms: float = 10.0     # upper-bound stimulus delay


def label_feature(t_ms: float, params: LabelingParams) -> str:
    """Label for a feature window starting at ``t_ms``.

    Windows fully inside the measurable odour pulse carry the stimulus odour
    (or 'blank' for control stimuli); windows fully after it are 'blank';
    anything overlapping a transition is 'rejected' and never trains.
    """
    if params.t_onset_ms <= t_ms < params.t_offset_ms - params.tau_ms + params.d_ms:
        return odour_class(params.odour)
    if t_ms >= params.t_offset_ms + params.d_ms:
        return BLANK
    return REJECTED


@dataclass
class PredictionTimeline:
    """Per-window predicted class over one trial."""

    t_ms: np.ndarray
    labels: list[str]
    trial_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t_ms = np.asarray(self.t_ms, dtype=np.int64)
        if self.t_ms.shape[0] == 0:
            raise DataError("empty prediction timeline")
        if self.t_ms.shape[0] != len(self.labels):
            raise DataError("timeline labels/times length mismatch")
        if np.any(np.diff(self.t_ms) != WINDOW_MS):
            raise DataError("timeline windows must be contiguous at 50 ms pitch")


def onset_offset(
    timeline: PredictionTimeline, t_onset_ms: float, t_offset_ms: float
) -> tuple[float | None, float | None]:
    """Detection latencies from the prediction timeline.

    Onset: first window start (at/after stimulus onset) predicting non-blank,
    relative to the stimulus onset. Offset: first window start after the
    stimulus offset predicting blank, relative to the offset. ``None`` marks
    an absent event.
    """
    onset = offset = None
    for t, lbl in zip(timeline.t_ms, timeline.labels):
        if onset is None and t >= t_onset_ms and lbl != BLANK and lbl != REJECTED:
            onset = float(t - t_onset_ms)
        if offset is None and t > t_offset_ms and lbl == BLANK:
            offset = float(t - t_offset_ms)
        if onset is not None and offset is not None:
            break
    return onset, offset


@dataclass
class TaskResult:
    classes: tuple[str, ...]
    confusion: np.ndarray          # rows: truth, cols: predicted (+1 col: none)
    accuracy: float
    balanced_accuracy: float | None = None
    onsets_ms: list = field(default_factory=list)
    offsets_ms: list = field(default_factory=list)
    flagged_trials: list = field(default_factory=list)


def modal_nonblank(timeline: PredictionTimeline) -> str | None:
    """Most frequent non-blank prediction; ties go to the earliest-achieved class."""
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    for pos, lbl in enumerate(timeline.labels):
        if lbl in (BLANK, REJECTED):
            continue
        counts[lbl] = counts.get(lbl, 0) + 1
        first_seen.setdefault(lbl, pos)
    if not counts:
        return None
    best = max(counts.values())
    tied = [c for c, n in counts.items() if n == best]
    tied.sort(key=lambda c: first_seen[c])
    return tied[0]


def trial_accuracy(
    timelines: list[PredictionTimeline], truths: list[str]
) -> TaskResult:
    """Per-trial classification from prediction timelines.

    The trial's predicted class is the modal non-blank prediction; trials with
    no non-blank prediction at all count as misses and are flagged.
    """
    if not timelines:
        raise DataError("need at least one trial")
    classes = tuple(sorted({odour_class(t) for t in truths}))
    confusion = np.zeros((len(classes), len(classes) + 1), dtype=np.int64)
    flagged = []
    hits = 0
    for tl, truth in zip(timelines, truths):
        truth = odour_class(truth)
        row = classes.index(truth)
        pred = modal_nonblank(tl)
        if pred is None:
            confusion[row, len(classes)] += 1
            flagged.append(tl.trial_id)
            continue
        col = classes.index(pred) if pred in classes else len(classes)
        confusion[row, col] += 1
        if pred == truth:
            hits += 1
    return TaskResult(
        classes=classes,
        confusion=confusion,
        accuracy=hits / len(timelines),
        flagged_trials=flagged,
    )


def balanced_accuracy(hits: int, s_plus: int, correct_rejections: int, s_minus: int) -> float:
    """Mean of hit rate and correct-rejection rate."""
    if s_plus < 1 or s_minus < 1:
        raise DataError("balanced accuracy needs at least one trial per side")
    return ((hits / s_plus) + (correct_rejections / s_minus)) / 2.0


def balanced_accuracy_multiclass(confusion: np.ndarray) -> float:
    """Mean per-class recall over classes with at least one trial."""
    recalls = []
    for row in range(confusion.shape[0]):
        total = confusion[row].sum()
        if total > 0:
            recalls.append(confusion[row, row] / total)
    if not recalls:
        raise DataError("empty confusion matrix")
    return float(np.mean(recalls))


# ---------------------------------------------------------------------------
# Chi-square randomisation check

def _regularized_gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x), series / continued fraction."""
    if a <= 0 or x < 0:
        raise DataError("invalid incomplete gamma arguments")
    if x == 0.0:
        return 1.0
    log_pref = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        # lower series, then complement
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(1000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return 1.0 - total * math.exp(log_pref)
    # continued fraction for Q (modified Lentz)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(log_pref) * h


def chi2_sf(statistic: float, dof: int) -> float:
    """Survival function of the chi-square distribution."""
    if dof < 1:
        raise DataError("chi-square needs dof >= 1")
    return min(1.0, max(0.0, _regularized_gamma_q(dof / 2.0, statistic / 2.0)))


def chi2_randomization(
    classes: list[str], onset_ms: np.ndarray, bin_ms: float = 3_600_000.0
) -> tuple[float, float, int]:
    """Pearson chi-square of the class x time-bin contingency table.

    Returns (p_value, statistic, dof). Empty bins are collapsed with a
    warning; a well-randomised trial order should not reject uniformity.
    """
    onset_ms = np.asarray(onset_ms, dtype=np.float64)
    if onset_ms.shape[0] != len(classes):
        raise DataError("classes/times length mismatch")
    names = sorted(set(classes))
    if len(names) < 2:
        raise DataError("need at least two classes")
    b0 = math.floor(onset_ms.min() / bin_ms)
    bins = np.floor(onset_ms / bin_ms).astype(np.int64) - b0
    n_bins = int(bins.max()) + 1
    if n_bins < 2:
        raise DataError("need at least two time bins")
    table = np.zeros((len(names), n_bins), dtype=np.float64)
    for cls, b in zip(classes, bins):
        table[names.index(cls), b] += 1
    col_tot = table.sum(axis=0)
    if np.any(col_tot == 0):
        warnings.warn("collapsing empty time bins", stacklevel=2)
        table = table[:, col_tot > 0]
    row_tot = table.sum(axis=1)
    if np.any(row_tot == 0):
        warnings.warn("collapsing empty classes", stacklevel=2)
        table = table[row_tot > 0]
    r, c = table.shape
    if r < 2 or c < 2:
        raise DataError("contingency table degenerate after collapsing")
    total = table.sum()
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / total
    statistic = float(np.sum((table - expected) ** 2 / expected))
    dof = (r - 1) * (c - 1)
    return chi2_sf(statistic, dof), statistic, dof
