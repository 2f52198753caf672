"""Feature learners: a small MLP, a passthrough baseline, and ingestion of
externally produced feature files.

All learners share one contract: ``fit(features, labeled)`` trains on the
labeled subset, ``extract(features)`` yields latent vectors for projection,
and ``predict_proba(features)`` yields row-stochastic class probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from confprop.core import LabeledSample


@runtime_checkable
class FeatureLearner(Protocol):
    """Contract shared by every learner variant."""

    def fit(
        self,
        features: np.ndarray,
        labeled: list[LabeledSample],
        n_classes: int | None = None,
        warm_start: bool = False,
    ) -> "FeatureLearner": ...

    def extract(self, features: np.ndarray) -> np.ndarray: ...

    def predict_proba(self, features: np.ndarray) -> np.ndarray: ...


@dataclass
class MlpConfig:
    """MLP training regimen: minibatch SGD with momentum and a per-update
    learning-rate decay lr_t = lr0 / (1 + decay * t)."""

    hidden_sizes: tuple[int, ...] = (256, 128)
    epochs: int = 15
    lr0: float = 0.1
    momentum: float = 0.9
    lr_decay: float = 1e-6
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden widths must be >= 1")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stable under large logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_loss(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean categorical cross-entropy via log-sum-exp."""
    zmax = logits.max(axis=1)
    lse = zmax + np.log(np.exp(logits - zmax[:, None]).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(y)), y]))


def _gather(labeled: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    idx = np.array([s.index for s in labeled], dtype=np.int64)
    y = np.array([s.label for s in labeled], dtype=np.int64)
    return idx, y


class MlpLearner:
    """Fully connected network with rectified-linear hidden layers and a
    softmax output, trained by categorical cross-entropy.

    With no hidden layers the network degenerates to a softmax head and
    ``extract`` passes the input through unchanged.
    """

    def __init__(self, config: MlpConfig | None = None):
        self.config = config or MlpConfig()
        self.weights: list[np.ndarray] | None = None
        self.biases: list[np.ndarray] | None = None
        self.n_classes: int | None = None
        self.loss_history: list[float] = []
        self._rng: np.random.Generator | None = None

    # -- training ---------------------------------------------------------

    def _init_params(self, d: int, c: int) -> None:
        dims = [d, *self.config.hidden_sizes, c]
        rng = np.random.default_rng(self.config.seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            # small noise keeps pre-activations off the exact ReLU kink,
            # where analytic subgradients and finite differences disagree
            self.biases.append(rng.standard_normal(fan_out) * 0.01)
        self._rng = rng
        self.n_classes = c

    def fit(
        self,
        features: np.ndarray,
        labeled: list[LabeledSample],
        n_classes: int | None = None,
        warm_start: bool = False,
    ) -> "MlpLearner":
        features = np.asarray(features, dtype=np.float64)
        if not labeled:
            raise ValueError("labeled set is empty")
        idx, y = _gather(labeled)
        if idx.max() >= features.shape[0]:
            raise ValueError("labeled index out of range")
        x = features[idx]
        c = int(n_classes) if n_classes is not None else int(y.max()) + 1
        if len(np.unique(y)) < 2:
            raise ValueError("need labeled samples from at least 2 classes")
        if y.max() >= c:
            raise ValueError("label id exceeds class count")
        if any(h < c for h in self.config.hidden_sizes):
            raise ValueError(f"hidden widths must be >= class count c={c}")

        if not (warm_start and self.weights is not None and self.n_classes == c):
            self._init_params(x.shape[1], c)
        if x.shape[1] != self.weights[0].shape[0]:
            raise ValueError(
                f"feature dimension {x.shape[1]} does not match "
                f"network input {self.weights[0].shape[0]}"
            )

        cfg = self.config
        m = x.shape[0]
        velocity_w = [np.zeros_like(w) for w in self.weights]
        velocity_b = [np.zeros_like(b) for b in self.biases]
        t = 0
        self.loss_history = [_log_loss(self._logits(x), y)]
        for _ in range(cfg.epochs):
            order = self._rng.permutation(m)
            for start in range(0, m, cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                gw, gb = self._backprop(x[batch], y[batch])
                lr = cfg.lr0 / (1.0 + cfg.lr_decay * t)
                for i in range(len(self.weights)):
                    velocity_w[i] = cfg.momentum * velocity_w[i] - lr * gw[i]
                    velocity_b[i] = cfg.momentum * velocity_b[i] - lr * gb[i]
                    self.weights[i] += velocity_w[i]
                    self.biases[i] += velocity_b[i]
                t += 1
            self.loss_history.append(_log_loss(self._logits(x), y))
        return self

    def _forward(self, x: np.ndarray) -> list[np.ndarray]:
        """Activations per layer; entry 0 is the input, the last is logits."""
        acts = [x]
        a = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == len(self.weights) - 1 else np.maximum(z, 0.0)
            acts.append(a)
        return acts

    def _logits(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[-1]

    def _backprop(
        self, x: np.ndarray, y: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        acts = self._forward(x)
        b = x.shape[0]
        probs = softmax(acts[-1])
        delta = probs
        delta[np.arange(b), y] -= 1.0
        delta /= b
        gw: list[np.ndarray] = [None] * len(self.weights)
        gb: list[np.ndarray] = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return gw, gb

    # -- inference --------------------------------------------------------

    def _require_trained(self) -> None:
        if self.weights is None:
            raise RuntimeError("learner has not been trained")

    def extract(self, features: np.ndarray) -> np.ndarray:
        """Activations of the last hidden layer (the input itself if the
        network has no hidden layers)."""
        self._require_trained()
        x = np.asarray(features, dtype=np.float64)
        if not self.config.hidden_sizes:
            return x.copy()
        return self._forward(x)[-2]

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        self._require_trained()
        x = np.asarray(features, dtype=np.float64)
        return softmax(self._logits(x))


def gradient_check(
    config: MlpConfig, features: np.ndarray, labels: np.ndarray, h: float = 1e-5
) -> float:
    """Max relative error between backprop and central finite differences.

    Intended for tiny problems (n <= 8, widths <= 8); every parameter is
    perturbed individually, so cost grows with the parameter count.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] > 8 or any(w > 8 for w in config.hidden_sizes):
        raise ValueError("gradient check is limited to tiny problems")
    learner = MlpLearner(config)
    learner._init_params(x.shape[1], int(y.max()) + 1)
    gw, gb = learner._backprop(x, y)

    def loss() -> float:
        return _log_loss(learner._logits(x), y)

    worst = 0.0
    for params, grads in ((learner.weights, gw), (learner.biases, gb)):
        for arr, g in zip(params, grads):
            flat = arr.ravel()
            gflat = g.ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                up = loss()
                flat[j] = orig - h
                down = loss()
                flat[j] = orig
                numeric = (up - down) / (2.0 * h)
                denom = max(abs(gflat[j]) + abs(numeric), 1e-8)
                worst = max(worst, abs(gflat[j] - numeric) / denom)
    return worst


class IdentityLearner:
    """Passthrough feature learner: latents are the raw input features and
    predictions come from a softmax head fit on the labeled rows."""

    def __init__(self, config: MlpConfig | None = None):
        base = config or MlpConfig()
        self.head = MlpLearner(
            MlpConfig(
                hidden_sizes=(),
                epochs=base.epochs,
                lr0=base.lr0,
                momentum=base.momentum,
                lr_decay=base.lr_decay,
                batch_size=base.batch_size,
                seed=base.seed,
            )
        )

    def fit(
        self,
        features: np.ndarray,
        labeled: list[LabeledSample],
        n_classes: int | None = None,
        warm_start: bool = False,
    ) -> "IdentityLearner":
        self.head.fit(features, labeled, n_classes=n_classes, warm_start=warm_start)
        return self

    def extract(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64).copy()

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return self.head.predict_proba(features)


def identity_learner(config: MlpConfig | None = None) -> IdentityLearner:
    return IdentityLearner(config)


@dataclass
class ExternalFeatureStore:
    """Path-addressed latent matrix keyed by sample id.

    File format: a header line ``h=<int> n=<int>`` (extra ``key=value``
    tokens are kept as metadata), then one line per sample:
    ``<id>,<v1>,...,<vh>`` in decimal text.
    """

    ids: list[str]
    matrix: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str) -> "ExternalFeatureStore":
        with open(path, "r", encoding="utf-8") as fin:
            header = fin.readline().strip()
            meta: dict = {}
            for token in header.split():
                if "=" not in token:
                    raise ValueError(f"malformed header token {token!r}")
                key, value = token.split("=", 1)
                meta[key] = value
            if "h" not in meta or "n" not in meta:
                raise ValueError("header must declare h=<int> n=<int>")
            h = int(meta["h"])
            n = int(meta["n"])
            ids: list[str] = []
            rows = np.empty((n, h))
            for i in range(n):
                line = fin.readline()
                if not line:
                    raise ValueError(f"expected {n} rows, file ended at {i}")
                parts = line.rstrip("\n").split(",")
                if len(parts) != h + 1:
                    raise ValueError(
                        f"row {i} has {len(parts) - 1} values, expected h={h}"
                    )
                ids.append(parts[0])
                rows[i] = [float(v) for v in parts[1:]]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids in store")
        return cls(ids=ids, matrix=rows, metadata=meta)

    def save(self, path: str) -> None:
        h = self.matrix.shape[1]
        extra = " ".join(
            f"{k}={v}" for k, v in self.metadata.items() if k not in ("h", "n")
        )
        header = f"h={h} n={len(self.ids)}" + (f" {extra}" if extra else "")
        with open(path, "w", encoding="utf-8") as fout:
            fout.write(header + "\n")
            for sid, row in zip(self.ids, self.matrix):
                fout.write(sid + "," + ",".join(repr(float(v)) for v in row) + "\n")

    def align(self, ids: list[str]) -> np.ndarray:
        """Rows reordered to match the given id manifest."""
        index = {sid: i for i, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in index]
        if missing:
            raise ValueError(f"store is missing sample ids: {missing[:5]}")
        return self.matrix[[index[sid] for sid in ids]]


class ExternalFeatureLearner:
    """Learner backed by a fixed latent matrix from an external store.

    ``extract`` returns the stored rows (aligned to the dataset manifest);
    predictions come from a softmax head trained on the stored rows of the
    labeled samples.
    """

    def __init__(
        self,
        store: ExternalFeatureStore,
        ids: list[str] | None = None,
        config: MlpConfig | None = None,
    ):
        self.store = store
        self.latents = store.align(ids) if ids is not None else store.matrix
        base = config or MlpConfig()
        self.head = MlpLearner(
            MlpConfig(
                hidden_sizes=(),
                epochs=base.epochs,
                lr0=base.lr0,
                momentum=base.momentum,
                lr_decay=base.lr_decay,
                batch_size=base.batch_size,
                seed=base.seed,
            )
        )

    def fit(
        self,
        features: np.ndarray,
        labeled: list[LabeledSample],
        n_classes: int | None = None,
        warm_start: bool = False,
    ) -> "ExternalFeatureLearner":
        if np.asarray(features).shape[0] != self.latents.shape[0]:
            raise ValueError("feature row count does not match the store")
        self.head.fit(self.latents, labeled, n_classes=n_classes, warm_start=warm_start)
        return self

    def extract(self, features: np.ndarray) -> np.ndarray:
        if np.asarray(features).shape[0] != self.latents.shape[0]:
            raise ValueError("feature row count does not match the store")
        return self.latents.copy()

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        if np.asarray(features).shape[0] != self.latents.shape[0]:
            raise ValueError("feature row count does not match the store")
        return self.head.predict_proba(self.latents)


def load_external_features(
    store: ExternalFeatureStore,
    ids: list[str] | None = None,
    config: MlpConfig | None = None,
) -> ExternalFeatureLearner:
    """Build a learner over stored latent rows, aligned to an id manifest."""
    return ExternalFeatureLearner(store, ids=ids, config=config)
