"""The iterative pseudo-labeling loop.

One iteration: extract latent features for the supervised and unsupervised
samples, project them to 2D, propagate labels through the optimum-path
forest, keep the confident pseudo-labels, retrain the learner on the
supervised set plus the kept labels, and evaluate on the held-out test set.

Regimes:
  * ``self_training``  - no projection or propagation; the learner
    pseudo-labels all unsupervised samples with its own predictions.
  * ``deepfa``         - full propagation; every unsupervised sample keeps
    its propagated label.
  * ``conf_fixed``     - only samples whose propagation confidence clears a
    fixed threshold are kept.
  * ``conf_adaptive``  - the threshold follows a per-iteration schedule.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace

import numpy as np

from confprop.core import (
    Dataset,
    LabeledSample,
    LabelSource,
    MetricsRecord,
    Split,
    compute_metrics,
)
from confprop.learner import (
    ExternalFeatureStore,
    FeatureLearner,
    IdentityLearner,
    MlpConfig,
    MlpLearner,
    load_external_features,
)
from confprop.opf import ForestResult, PropagationGraph, fit_propagate
from confprop.tsne import TsneParams, run_tsne

DEFAULT_ADAPTIVE_SCHEDULE = (0.80, 0.84, 0.88, 0.92, 0.96)


class Regime(enum.Enum):
    SELF_TRAINING = "self_training"
    DEEPFA = "deepfa"
    CONF_FIXED = "conf_fixed"
    CONF_ADAPTIVE = "conf_adaptive"


@dataclass
class LearnerConfig:
    """Which learner the loop trains: the built-in MLP, the passthrough
    baseline, or a store of externally produced features."""

    kind: str = "mlp"
    mlp: MlpConfig = field(default_factory=MlpConfig)
    store_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mlp", "identity", "external"):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.kind == "external" and not self.store_path:
            raise ValueError("external learner needs a store_path")

    def build(self, ids: list[str] | None = None) -> FeatureLearner:
        if self.kind == "mlp":
            return MlpLearner(self.mlp)
        if self.kind == "identity":
            return IdentityLearner(self.mlp)
        store = ExternalFeatureStore.load(self.store_path)
        return load_external_features(store, ids=ids, config=self.mlp)


@dataclass
class LoopConfig:
    regime: Regime
    tau: float | None = None
    tau_schedule: tuple[float, ...] | None = None
    n_iterations: int = 5
    seed: int = 0
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    tsne: TsneParams = field(default_factory=TsneParams)
    inclusive_threshold: bool = True
    warm_start: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.regime, str):
            self.regime = Regime(self.regime)
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.regime is Regime.CONF_FIXED:
            if self.tau is None:
                raise ValueError("conf_fixed needs a tau")
            if not 0.5 < self.tau < 1.0:
                raise ValueError(f"tau must lie in (0.5, 1), got {self.tau}")
        if self.regime is Regime.CONF_ADAPTIVE:
            if self.tau_schedule is None:
                if self.n_iterations != len(DEFAULT_ADAPTIVE_SCHEDULE):
                    raise ValueError(
                        "conf_adaptive needs a tau_schedule when "
                        f"n_iterations != {len(DEFAULT_ADAPTIVE_SCHEDULE)}"
                    )
                self.tau_schedule = DEFAULT_ADAPTIVE_SCHEDULE
            self.tau_schedule = tuple(float(t) for t in self.tau_schedule)
            if len(self.tau_schedule) != self.n_iterations:
                raise ValueError("tau_schedule length must equal n_iterations")
            if any(not 0.5 < t < 1.0 for t in self.tau_schedule):
                raise ValueError("every scheduled tau must lie in (0.5, 1)")


@dataclass
class IterationReport:
    iteration: int
    tau: float | None
    n_selected: int
    propagation_accuracy: float
    coverage: float
    test_accuracy: float
    kappa: float
    stage_ms: dict[str, float] = field(default_factory=dict, compare=False)


@dataclass
class LoopState:
    iteration: int
    learner: FeatureLearner
    pseudo: list[LabeledSample]
    history: list[IterationReport]


def tau_for_iteration(config: LoopConfig, iteration: int) -> float | None:
    """Threshold in effect for a 1-based iteration index.

    Fixed regime: the configured constant. Adaptive regime: the scheduled
    value. Regimes without thresholding return None.
    """
    if not 1 <= iteration <= config.n_iterations:
        raise ValueError(
            f"iteration {iteration} out of range 1..{config.n_iterations}"
        )
    if config.regime is Regime.CONF_FIXED:
        return config.tau
    if config.regime is Regime.CONF_ADAPTIVE:
        return config.tau_schedule[iteration - 1]
    return None


def select_confident(
    forest: ForestResult,
    u_idx: np.ndarray,
    tau: float,
    inclusive: bool = True,
    u_nodes: np.ndarray | None = None,
) -> list[LabeledSample]:
    """Pseudo-labels for the unsupervised samples clearing the threshold.

    ``u_idx`` are dataset indices of the unsupervised samples. By the
    builder convention the propagation graph lists seeds first, so the
    unsupervised samples occupy the trailing ``len(u_idx)`` node positions;
    pass ``u_nodes`` to override that mapping.
    """
    u_idx = np.asarray(u_idx, dtype=np.int64)
    n = forest.label.shape[0]
    if u_nodes is None:
        u_nodes = np.arange(n - u_idx.size, n)
    u_nodes = np.asarray(u_nodes, dtype=np.int64)
    if u_nodes.shape != u_idx.shape:
        raise ValueError("u_nodes and u_idx differ in length")
    conf = forest.confidence[u_nodes]
    keep = conf >= tau if inclusive else conf > tau
    return [
        LabeledSample(
            index=int(u_idx[j]),
            label=int(forest.label[u_nodes[j]]),
            source=LabelSource.PSEUDO,
        )
        for j in np.flatnonzero(keep)
    ]


def _supervised_samples(dataset: Dataset, split: Split) -> list[LabeledSample]:
    return [
        LabeledSample(int(i), int(dataset.labels[i]), LabelSource.SUPERVISED)
        for i in split.s_idx
    ]


def _evaluate(
    learner: FeatureLearner,
    dataset: Dataset,
    split: Split,
    pseudo: list[LabeledSample],
) -> MetricsRecord:
    probs = learner.predict_proba(dataset.features)
    pred = np.argmax(probs[split.t_idx], axis=1)
    truth = dataset.labels[split.t_idx]
    return compute_metrics(pred, truth, pseudo, dataset.labels, split.u_idx)


def run_iteration(
    state: LoopState,
    config: LoopConfig,
    split: Split,
    dataset: Dataset,
    trace: list[str] | None = None,
) -> LoopState:
    """One pass of the loop, appending a report to the state history.

    Supervised labels are re-read from the dataset every pass and pseudo-
    labels are recomputed from scratch, so no stale label can survive an
    iteration. An empty confident selection degrades to retraining on the
    supervised set alone.
    """
    it = state.iteration + 1
    stage_ms: dict[str, float] = {}

    def mark(stage: str, t0: float) -> None:
        stage_ms[stage] = (time.perf_counter() - t0) * 1000.0
        if trace is not None:
            trace.append(stage)

    tau = tau_for_iteration(config, it)
    if config.regime is Regime.SELF_TRAINING:
        t0 = time.perf_counter()
        probs = state.learner.predict_proba(dataset.features)
        mark("predict", t0)
        t0 = time.perf_counter()
        pred_u = np.argmax(probs[split.u_idx], axis=1)
        pseudo = [
            LabeledSample(int(i), int(k), LabelSource.PSEUDO)
            for i, k in zip(split.u_idx, pred_u)
        ]
        mark("select", t0)
    else:
        t0 = time.perf_counter()
        latents = state.learner.extract(dataset.features)
        mark("extract", t0)
        su = np.concatenate([split.s_idx, split.u_idx])
        t0 = time.perf_counter()
        embedding = run_tsne(latents[su], config.tsne)
        mark("project", t0)
        t0 = time.perf_counter()
        graph = PropagationGraph(
            points=embedding.y,
            seed_indices=np.arange(split.s_idx.size),
            seed_labels=dataset.labels[split.s_idx],
            c=dataset.c,
        )
        forest = fit_propagate(graph)
        mark("propagate", t0)
        t0 = time.perf_counter()
        if config.regime is Regime.DEEPFA:
            pseudo = select_confident(forest, split.u_idx, tau=0.0)
        else:
            pseudo = select_confident(
                forest, split.u_idx, tau, inclusive=config.inclusive_threshold
            )
        mark("select", t0)

    t0 = time.perf_counter()
    labeled = _supervised_samples(dataset, split) + pseudo
    if config.warm_start:
        learner = state.learner
        learner.fit(dataset.features, labeled, n_classes=dataset.c, warm_start=True)
    else:
        learner = config.learner.build(ids=dataset.ids)
        learner.fit(dataset.features, labeled, n_classes=dataset.c)
    mark("retrain", t0)

    t0 = time.perf_counter()
    metrics = _evaluate(learner, dataset, split, pseudo)
    mark("evaluate", t0)

    report = IterationReport(
        iteration=it,
        tau=tau,
        n_selected=len(pseudo),
        propagation_accuracy=metrics.propagation_accuracy,
        coverage=metrics.coverage,
        test_accuracy=metrics.accuracy,
        kappa=metrics.kappa,
        stage_ms=stage_ms,
    )
    return LoopState(
        iteration=it,
        learner=learner,
        pseudo=pseudo,
        history=state.history + [report],
    )


def seeded_config(config: LoopConfig) -> LoopConfig:
    """Propagate the loop's master seed into the learner and projection."""
    return replace(
        config,
        learner=replace(
            config.learner, mlp=replace(config.learner.mlp, seed=config.seed)
        ),
        tsne=replace(config.tsne, seed=config.seed),
    )


def run_loop(
    config: LoopConfig,
    dataset: Dataset,
    split: Split,
    trace: list[str] | None = None,
) -> list[IterationReport]:
    """Initial fit on the supervised set, then the configured iterations.

    ``config.seed`` keys every source of randomness in the loop: it is
    pushed into the learner and projection seeds before anything runs.
    """
    split.validate(dataset.n)
    config = seeded_config(config)
    learner = config.learner.build(ids=dataset.ids)
    learner.fit(
        dataset.features, _supervised_samples(dataset, split), n_classes=dataset.c
    )
    if trace is not None:
        trace.append("initial_fit")
    state = LoopState(iteration=0, learner=learner, pseudo=[], history=[])
    for _ in range(config.n_iterations):
        state = run_iteration(state, config, split, dataset, trace=trace)
    return state.history
