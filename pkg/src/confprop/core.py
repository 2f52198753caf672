"""Domain types, stratified splitting, and evaluation metrics.

Everything here is pure and deterministic: splits are a function of the
dataset, the fraction triple, and a seed; metrics are functions of label
vectors. No shared mutable state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class LabelSource(enum.Enum):
    """Where a sample's label came from."""

    SUPERVISED = "supervised"
    PSEUDO = "pseudo"


@dataclass(frozen=True)
class LabeledSample:
    """A sample index with an assigned class label.

    Supervised samples carry ground-truth labels and never change across
    iterations; pseudo samples carry propagated labels and are recomputed
    every iteration.
    """

    index: int
    label: int
    source: LabelSource = LabelSource.SUPERVISED


@dataclass
class Dataset:
    """Feature matrix with integer class labels.

    ``labels`` holds class ids in ``{0..c-1}``; ``ids`` are stable
    per-sample identifiers (row order by default). ``label_values`` records
    the original label value for each contiguous class id when the source
    labels were remapped at load time.
    """

    features: np.ndarray
    labels: np.ndarray
    c: int
    ids: list[str] = field(default_factory=list)
    label_values: tuple | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2D matrix")
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ValueError(
                f"labels length {self.labels.shape} does not match n={n}"
            )
        if self.c < 2:
            raise ValueError(f"need at least 2 classes, got c={self.c}")
        if n < self.c:
            raise ValueError(f"need n >= c, got n={n} < c={self.c}")
        if self.labels.min() < 0 or self.labels.max() >= self.c:
            raise ValueError("labels must lie in {0..c-1}")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")
        if not self.ids:
            self.ids = [str(i) for i in range(n)]
        if len(self.ids) != n:
            raise ValueError("ids length does not match n")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Split:
    """Disjoint partition of dataset indices into supervised (s),
    unsupervised (u), and test (t) sets."""

    s_idx: np.ndarray
    u_idx: np.ndarray
    t_idx: np.ndarray

    def validate(self, n: int) -> None:
        parts = [self.s_idx, self.u_idx, self.t_idx]
        allidx = np.concatenate(parts)
        if len(np.unique(allidx)) != len(allidx):
            raise ValueError("split parts overlap")
        if len(allidx) != n or not np.array_equal(np.sort(allidx), np.arange(n)):
            raise ValueError("split does not cover all indices exactly once")


@dataclass
class MetricsRecord:
    """Per-evaluation metric bundle.

    ``propagation_accuracy`` is NaN when no sample received a pseudo-label
    (coverage 0); all other fields stay within their natural ranges.
    """

    accuracy: float
    kappa: float
    propagation_accuracy: float
    coverage: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if not -1.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa {self.kappa} outside [-1, 1]")
        if not math.isnan(self.propagation_accuracy):
            if not 0.0 <= self.propagation_accuracy <= 1.0:
                raise ValueError(
                    f"propagation accuracy {self.propagation_accuracy} outside [0, 1]"
                )
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"coverage {self.coverage} outside [0, 1]")


def _largest_remainder(n_class: int, fractions: tuple[float, float, float]) -> list[int]:
    """Apportion n_class samples to the three partitions.

    Floors the real quotas and hands the leftover units to the partitions
    with the largest fractional remainders (ties go to the earlier
    partition, i.e. s before u before t).
    """
    quotas = [f * n_class for f in fractions]
    counts = [math.floor(q) for q in quotas]
    leftover = n_class - sum(counts)
    remainders = [q - c for q, c in zip(quotas, counts)]
    order = sorted(range(3), key=lambda i: (-remainders[i], i))
    for i in range(leftover):
        counts[order[i]] += 1
    return counts


def stratified_split(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.01, 0.69, 0.30),
    seed: int = 0,
) -> Split:
    """Split a dataset into supervised/unsupervised/test index sets.

    Each class is apportioned independently by the largest-remainder rule,
    so per-partition totals are exact. Every class is forced to contribute
    at least one sample to the supervised set (taking one from its largest
    other allocation if rounding left it empty), since label propagation
    cannot reach a class with no seed.

    Raises ValueError for invalid fractions or any class with fewer than
    3 samples (one sample cannot be placed in each partition).
    """
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3:
        raise ValueError("fractions must be a triple (f_s, f_u, f_t)")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fr)!r}")
    if any(f <= 0 for f in fr):
        raise ValueError("all fractions must be positive")

    rng = np.random.default_rng(seed)
    s_parts: list[np.ndarray] = []
    u_parts: list[np.ndarray] = []
    t_parts: list[np.ndarray] = []
    for k in range(dataset.c):
        members = np.flatnonzero(dataset.labels == k)
        if members.size < 3:
            raise ValueError(
                f"class {k} has only {members.size} samples; "
                "need at least 3 to place one in each partition"
            )
        counts = _largest_remainder(members.size, fr)
        if counts[0] == 0:
            donor = 1 if counts[1] >= counts[2] else 2
            counts[donor] -= 1
            counts[0] = 1
        members = rng.permutation(members)
        s_parts.append(members[: counts[0]])
        u_parts.append(members[counts[0] : counts[0] + counts[1]])
        t_parts.append(members[counts[0] + counts[1] :])

    split = Split(
        s_idx=np.sort(np.concatenate(s_parts)),
        u_idx=np.sort(np.concatenate(u_parts)),
        t_idx=np.sort(np.concatenate(t_parts)),
    )
    split.validate(dataset.n)
    return split


def accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of positions where pred equals truth."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty label vectors")
    return float(np.mean(pred == truth))


def cohen_kappa(pred: np.ndarray, truth: np.ndarray) -> float:
    """Chance-corrected agreement between two label vectors.

    kappa = (p_o - p_e) / (1 - p_e), where p_o is the observed agreement
    and p_e the chance agreement from the product of the two marginal
    distributions. Degenerate case p_e = 1 is pinned to 1.0 when p_o = 1
    and 0.0 otherwise.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty label vectors")
    n = pred.size
    p_o = float(np.mean(pred == truth))
    classes = np.union1d(pred, truth)
    p_pred = np.array([np.count_nonzero(pred == k) for k in classes]) / n
    p_truth = np.array([np.count_nonzero(truth == k) for k in classes]) / n
    p_e = float(np.dot(p_pred, p_truth))
    if abs(1.0 - p_e) < 1e-15:
        return 1.0 if p_o >= 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def propagation_accuracy(
    pseudo: list[LabeledSample],
    truth: np.ndarray,
    u_idx: np.ndarray,
) -> tuple[float, float]:
    """Accuracy of pseudo-labels against hidden truth, plus coverage.

    Returns ``(fraction correct among pseudo-labeled samples,
    |pseudo| / |U|)``. An empty pseudo set yields ``(nan, 0.0)``; the NaN
    sentinel signals an over-aggressive confidence threshold.
    """
    truth = np.asarray(truth)
    u_set = set(int(i) for i in np.asarray(u_idx).ravel())
    if len(u_set) == 0:
        raise ValueError("empty unsupervised set")
    for s in pseudo:
        if s.index not in u_set:
            raise ValueError(f"pseudo-labeled index {s.index} not in U")
    coverage = len(pseudo) / len(u_set)
    if not pseudo:
        return float("nan"), 0.0
    correct = sum(1 for s in pseudo if s.label == truth[s.index])
    return correct / len(pseudo), coverage


def compute_metrics(
    pred: np.ndarray,
    truth: np.ndarray,
    pseudo: list[LabeledSample],
    labels: np.ndarray,
    u_idx: np.ndarray,
) -> MetricsRecord:
    """Bundle test-set metrics with pseudo-label quality in one record."""
    prop_acc, coverage = propagation_accuracy(pseudo, labels, u_idx)
    return MetricsRecord(
        accuracy=accuracy(pred, truth),
        kappa=cohen_kappa(pred, truth),
        propagation_accuracy=prop_acc,
        coverage=coverage,
    )
