"""Exact t-SNE projection of feature vectors to 2D.

O(n^2) reference-style implementation: per-point bandwidths found by
binary search against a perplexity target, symmetrized joint affinities,
Student-t low-dimensional kernel, and plain momentum gradient descent with
an early exaggeration phase. Deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Schedule constants: exaggeration is applied for the first 250 iterations
# and momentum switches from initial to final at the same point.
EXAGGERATION_ITERS = 250
MOMENTUM_SWITCH_ITER = 250

# How often the KL objective is recorded during descent.
KL_TRACK_EVERY = 50


@dataclass
class TsneParams:
    perplexity: float = 30.0
    n_iter: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    seed: int = 0
    min_prob_floor: float = 1e-12
    standardize: bool = False

    def __post_init__(self) -> None:
        if self.perplexity < 1:
            raise ValueError("perplexity must be >= 1")
        if self.n_iter < 250:
            raise ValueError("n_iter must be >= 250")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class Affinities:
    """Symmetric joint probabilities with the per-point bandwidths used."""

    p: np.ndarray
    sigmas: np.ndarray


@dataclass
class Embedding2D:
    """2D coordinates plus the recorded KL objective trace.

    ``kl_history`` holds (iteration, kl) pairs against the unexaggerated
    affinities; the first entry is the objective at the initial layout and
    the last the objective at the final one.
    """

    y: np.ndarray
    kl_history: list[tuple[int, float]] = field(default_factory=list)


def perplexity_search(
    sq_dists_row: np.ndarray, perplexity: float, tol: float = 1e-4, max_steps: int = 64
) -> tuple[np.ndarray, float]:
    """Find the conditional probability row matching a perplexity target.

    Binary-searches the precision beta = 1/(2 sigma^2) of a Gaussian kernel
    over the given squared distances until 2^H(row) is within ``tol`` of
    the requested perplexity (H = Shannon entropy in bits), or the step
    budget runs out. Returns the normalized row and sigma.

    A row of all-zero distances has no usable scale: the uniform row is
    returned with sigma = +inf.
    """
    d = np.asarray(sq_dists_row, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("need a nonempty 1D row of squared distances")
    if not np.isfinite(d).all() or (d < 0).any():
        raise ValueError("squared distances must be finite and nonnegative")
    if d.max() == 0.0:
        return np.full(d.size, 1.0 / d.size), np.inf

    d = d - d.min()  # uniform shift; cancels under normalization
    beta = 1.0
    beta_min, beta_max = 0.0, np.inf
    p = np.exp(-d * beta)
    for _ in range(max_steps):
        total = p.sum()
        p_norm = p / total
        nz = p_norm[p_norm > 0]
        h_bits = float(-(nz * np.log2(nz)).sum())
        achieved = 2.0**h_bits
        if abs(achieved - perplexity) <= tol:
            break
        if achieved > perplexity:
            beta_min = beta
            beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
        else:
            beta_max = beta
            beta = (beta + beta_min) / 2.0
        p = np.exp(-d * beta)
    sigma = float(np.sqrt(1.0 / (2.0 * beta)))
    return p / p.sum(), sigma


def symmetrize(
    conditionals: np.ndarray,
    sigmas: np.ndarray | None = None,
    min_prob_floor: float = 1e-12,
) -> Affinities:
    """Joint affinities p_ij = (p_j|i + p_i|j) / (2n) from conditional rows.

    ``conditionals`` is the full n x n conditional matrix with a zero
    diagonal, each row summing to 1. The joint matrix sums to 1; the floor
    is then applied to off-diagonal entries (the diagonal stays zero).
    """
    cond = np.asarray(conditionals, dtype=np.float64)
    n = cond.shape[0]
    if cond.shape != (n, n):
        raise ValueError("conditional matrix must be square")
    p = (cond + cond.T) / (2.0 * n)
    off_diag = ~np.eye(n, dtype=bool)
    p[off_diag] = np.maximum(p[off_diag], min_prob_floor)
    if sigmas is None:
        sigmas = np.full(n, np.nan)
    return Affinities(p=p, sigmas=np.asarray(sigmas, dtype=np.float64))


def _squared_distances(x: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clipped at zero."""
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_affinities(
    features: np.ndarray, params: TsneParams
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row perplexity-calibrated conditional probabilities."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    sq = _squared_distances(x)
    cond = np.zeros((n, n))
    sigmas = np.empty(n)
    others = np.arange(n)
    for i in range(n):
        mask = others != i
        row, sigmas[i] = perplexity_search(sq[i, mask], params.perplexity)
        cond[i, mask] = row
    return cond, sigmas


def _student_t_kernel(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized Student-t similarities and the normalized q matrix."""
    num = 1.0 / (1.0 + _squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return num, q


def _gradient(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """KL gradient: grad_i = 4 sum_j (p_ij - q_ij) num_ij (y_i - y_j)."""
    num, q = _student_t_kernel(y)
    pq = (p - q) * num
    return 4.0 * (pq.sum(axis=1)[:, None] * y - pq @ y)


def kl_gradient(aff: Affinities, y: np.ndarray) -> np.ndarray:
    """Gradient of KL(P || Q) with respect to the 2D coordinates."""
    return _gradient(aff.p, np.asarray(y, dtype=np.float64))


def kl_divergence(aff: Affinities, y: np.ndarray, min_prob_floor: float = 1e-12) -> float:
    """KL(P || Q) over off-diagonal entries, with q floored against log(0)."""
    p = aff.p
    _, q = _student_t_kernel(np.asarray(y, dtype=np.float64))
    off = ~np.eye(p.shape[0], dtype=bool)
    pv = p[off]
    qv = np.maximum(q[off], min_prob_floor)
    return float(np.sum(pv * np.log(pv / qv)))


def run_tsne(features: np.ndarray, params: TsneParams) -> Embedding2D:
    """Project features to 2D by gradient descent on the t-SNE objective.

    Initial coordinates are seeded Gaussian noise with std 1e-4; the first
    250 iterations run with exaggerated affinities and the lower momentum.
    Coordinates are re-centered every iteration. Raises if the descent
    produces non-finite coordinates, reporting the iteration index.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2D matrix")
    n = x.shape[0]
    if n < 4:
        raise ValueError("need at least 4 samples")
    if not np.isfinite(x).all():
        raise ValueError("features contain non-finite values")
    if params.perplexity > (n - 1) / 3.0:
        raise ValueError(
            f"perplexity {params.perplexity} too large for n={n}; "
            f"need perplexity <= (n-1)/3"
        )
    if params.standardize:
        std = x.std(axis=0)
        std[std == 0] = 1.0
        x = (x - x.mean(axis=0)) / std

    cond, sigmas = conditional_affinities(x, params)
    aff = symmetrize(cond, sigmas, params.min_prob_floor)
    p = aff.p

    rng = np.random.default_rng(params.seed)
    y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(y)
    history: list[tuple[int, float]] = [(0, kl_divergence(aff, y, params.min_prob_floor))]

    p_early = p * params.early_exaggeration
    for it in range(params.n_iter):
        p_eff = p_early if it < EXAGGERATION_ITERS else p
        momentum = (
            params.initial_momentum if it < MOMENTUM_SWITCH_ITER else params.final_momentum
        )
        grad = _gradient(p_eff, y)
        velocity = momentum * velocity - params.learning_rate * grad
        y = y + velocity
        if not np.isfinite(y).all():
            raise ValueError(f"non-finite coordinates at iteration {it}")
        y = y - y.mean(axis=0)
        if (it + 1) % KL_TRACK_EVERY == 0 or it + 1 == params.n_iter:
            history.append((it + 1, kl_divergence(aff, y, params.min_prob_floor)))

    return Embedding2D(y=y, kl_history=history)
