"""Datasets, a multinomial logistic-regression model, SGD and accuracy.

Everything here is a pure function of its inputs. Arrays held by
:class:`Dataset` and :class:`ModelParams` are marked read-only so values can
be shared freely between rounds, participants and threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from fedcontrib import _backend
from fedcontrib._sgd_py import cross_entropy_grad, softmax


class DimensionError(ValueError):
    """Parameter and data shapes disagree."""


class EmptyDatasetError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss (usually a learning rate that is too high)."""


def _frozen(arr):
    arr.flags.writeable = False
    return arr


def derive_seed(*keys: int) -> int:
    """Mix integer keys into one 63-bit seed, stable across runs and platforms."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True, order="C")
        labels = np.array(self.labels, copy=True)
        if features.ndim != 2:
            raise DimensionError(f"features must be 2-d, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise DimensionError(
                f"{features.shape[0]} feature rows but labels have shape {labels.shape}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> Dataset:
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.num_classes)

    def with_labels(self, labels) -> Dataset:
        return Dataset(self.features, labels, self.num_classes)

    def equals(self, other: Dataset) -> bool:
        return (self.num_classes == other.num_classes
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True, eq=False)
class ModelParams:
    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64, copy=True, order="C")
        biases = np.array(self.biases, dtype=np.float64, copy=True)
        if weights.ndim != 2 or biases.shape != (weights.shape[0],):
            raise DimensionError(
                f"weights {weights.shape} and biases {biases.shape} are inconsistent")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "biases", _frozen(biases))

    @classmethod
    def zeros(cls, num_classes: int, dim: int) -> ModelParams:
        return cls(np.zeros((num_classes, dim)), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def shape(self):
        return (self.num_classes, self.dim)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.biases])

    @classmethod
    def from_flat(cls, vector, num_classes: int, dim: int) -> ModelParams:
        vector = np.asarray(vector, dtype=np.float64)
        split = num_classes * dim
        return cls(vector[:split].reshape(num_classes, dim), vector[split:])

    def equals(self, other: ModelParams) -> bool:
        """Bitwise equality of every entry."""
        return (np.array_equal(self.weights, other.weights)
                and np.array_equal(self.biases, other.biases))

    def allclose(self, other: ModelParams, atol: float = 1e-12) -> bool:
        return (self.shape == other.shape
                and np.allclose(self.weights, other.weights, rtol=0, atol=atol)
                and np.allclose(self.biases, other.biases, rtol=0, atol=atol))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 2
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _check_dims(params: ModelParams, data: Dataset):
    if params.dim != data.dim:
        raise DimensionError(f"model expects {params.dim} features, data has {data.dim}")
    if params.num_classes != data.num_classes:
        raise DimensionError(
            f"model has {params.num_classes} classes, data has {data.num_classes}")


def cross_entropy(params: ModelParams, data: Dataset) -> float:
    """Mean multinomial cross-entropy of ``params`` on ``data``."""
    _check_dims(params, data)
    if len(data) == 0:
        raise EmptyDatasetError("cannot compute the loss of an empty dataset")
    logits = data.features @ params.weights.T + params.biases
    top = logits.max(axis=1, keepdims=True)
    log_norm = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    picked = logits[np.arange(len(data)), data.labels]
    return float(np.mean(log_norm - picked))


def predict_proba(params: ModelParams, features) -> np.ndarray:
    return softmax(np.asarray(features, dtype=np.float64) @ params.weights.T + params.biases)


def compute_gradient(params: ModelParams, batch: Dataset) -> ModelParams:
    """Analytic mean cross-entropy gradient, returned in ModelParams shape."""
    _check_dims(params, batch)
    if len(batch) == 0:
        raise EmptyDatasetError("gradient of an empty batch is undefined")
    grad_w, grad_b = cross_entropy_grad(params.weights, params.biases,
                                        batch.features, batch.labels)
    return ModelParams(grad_w, grad_b)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Seeded shuffle of ``range(n)`` for one epoch, independent of other epochs."""
    rng = np.random.default_rng([seed, epoch])
    return rng.permutation(n).astype(np.int64)


def train_local(data: Dataset, init: ModelParams, cfg: TrainConfig,
                backend: str | None = None) -> ModelParams:
    """Mini-batch SGD on cross-entropy for exactly ``cfg.epochs`` epochs.

    ``backend`` picks a kernel explicitly ("python" or "cython"); by default
    the one chosen at import is used.
    """
    _check_dims(init, data)
    n = len(data)
    if n == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    kernel = _backend.sgd_epoch if backend is None else _backend.get_sgd_epoch(backend)

    weights = np.array(init.weights, dtype=np.float64, order="C")
    biases = np.array(init.biases, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = epoch_order(n, cfg.seed, epoch)
            kernel(weights, biases, data.features, data.labels, order,
                   float(cfg.learning_rate), int(cfg.batch_size))
            if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
                raise DivergenceError(
                    f"non-finite parameters after epoch {epoch + 1}; "
                    f"learning rate {cfg.learning_rate} is likely too large")
    result = ModelParams(weights, biases)
    with np.errstate(over="ignore", invalid="ignore"):
        loss = cross_entropy(result, data)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {loss}")
    return result


def evaluate(params: ModelParams, test: Dataset) -> float:
    """Fraction of rows whose highest-scoring class equals the label.

    Ties between class scores resolve to the lowest class index.
    """
    _check_dims(params, test)
    if len(test) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty test set")
    scores = test.features @ params.weights.T + params.biases
    hits = np.count_nonzero(np.argmax(scores, axis=1) == test.labels)
    return hits / len(test)


def make_blobs(centers, samples_per_class: int, seed: int, scale: float = 1.0) -> Dataset:
    """Gaussian blobs around ``centers`` (one class per row), rows shuffled."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2:
        raise ValueError("centers must be a (classes, dim) array")
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    num_classes, dim = centers.shape
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    features = centers[labels] + scale * rng.standard_normal((labels.shape[0], dim))
    order = rng.permutation(labels.shape[0])
    return Dataset(features[order], labels[order], num_classes)


def separation_distance(num_classes: int, max_error: float = 0.1) -> float:
    """Minimum centre spacing giving Bayes accuracy >= ``1 - max_error``.

    Union bound over the ``K - 1`` competing unit-variance classes: each
    pairwise confusion is ``Phi(-D / 2)``.
    """
    if num_classes < 2:
        return 0.0
    return 2.0 * NormalDist().inv_cdf(1.0 - max_error / (num_classes - 1))


def _pairwise_min_max(centers):
    diffs = centers[:, None, :] - centers[None, :, :]
    dists = np.sqrt((diffs ** 2).sum(axis=-1))[np.triu_indices(centers.shape[0], k=1)]
    return dists.min(), dists.max()


def synthetic_centers(num_classes: int, dim: int, seed: int, candidates: int = 64) -> np.ndarray:
    """Class centres whose closest pair sits exactly ``separation_distance`` apart.

    With ``num_classes <= dim`` the centres are a randomly rotated, scaled
    orthonormal frame, so every pair is equidistant. Otherwise the most evenly
    spread of ``candidates`` Gaussian draws is used.
    """
    rng = np.random.default_rng([seed, 0xC3])
    if num_classes < 2:
        return rng.standard_normal((num_classes, dim))
    target = separation_distance(num_classes)
    if num_classes <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
        return q.T * (target / np.sqrt(2.0))
    best, best_ratio = None, -1.0
    for _ in range(candidates):
        centers = rng.standard_normal((num_classes, dim))
        lo, hi = _pairwise_min_max(centers)
        if lo / hi > best_ratio:
            best, best_ratio = centers, lo / hi
    return best * (target / _pairwise_min_max(best)[0])


def make_synthetic_task(num_classes: int, dim: int, samples_per_class: int,
                        seed: int) -> Dataset:
    """Balanced unit-variance Gaussian-blob classification task."""
    if num_classes < 1 or dim < 1 or samples_per_class < 1:
        raise ValueError("num_classes, dim and samples_per_class must all be >= 1")
    centers = synthetic_centers(num_classes, dim, seed)
    return make_blobs(centers, samples_per_class, seed=derive_seed(seed, 1))


def split_dataset(data: Dataset, sizes, seed: int) -> list[Dataset]:
    """Disjoint random shards of the given sizes (IID split)."""
    sizes = [int(s) for s in sizes]
    if any(s < 0 for s in sizes) or sum(sizes) > len(data):
        raise ValueError(f"cannot cut shards {sizes} from {len(data)} rows")
    order = np.random.default_rng(seed).permutation(len(data))
    bounds = np.cumsum([0] + sizes)
    return [data.subset(order[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:])]
