"""Malicious participant behaviours: label flipping, free riding, untargeted poisoning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedcontrib.core_ml import Dataset, ModelParams


@dataclass(frozen=True)
class FlipSpec:
    p: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"flip probability must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class FreeRiderStrategy:
    """How a free rider fabricates its update.

    kind is one of ``random_params`` (uses ``scale``), ``echo_global`` or
    ``perturbed_global`` (uses ``noise_scale``).
    """

    kind: str = "random_params"
    scale: float = 1.0
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random_params", "echo_global", "perturbed_global"):
            raise ValueError(f"unknown free-rider strategy {self.kind!r}")
        if self.scale < 0 or self.noise_scale < 0:
            raise ValueError("scales must be >= 0")

    @classmethod
    def random_params(cls, scale=1.0, seed=0):
        return cls("random_params", scale=scale, seed=seed)

    @classmethod
    def echo_global(cls, seed=0):
        return cls("echo_global", seed=seed)

    @classmethod
    def perturbed_global(cls, noise_scale, seed=0):
        return cls("perturbed_global", noise_scale=noise_scale, seed=seed)


@dataclass(frozen=True)
class PoisonStrategy:
    kind: str = "sign_flip"
    scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("sign_flip", "gaussian_noise"):
            raise ValueError(f"unknown poisoning strategy {self.kind!r}")
        if self.scale < 0:
            raise ValueError("scale must be >= 0")

    @classmethod
    def sign_flip(cls, seed=0):
        return cls("sign_flip", seed=seed)

    @classmethod
    def gaussian_noise(cls, scale, seed=0):
        return cls("gaussian_noise", scale=scale, seed=seed)


def flip_labels(data: Dataset, spec: FlipSpec) -> Dataset:
    """Replace each label, with probability ``spec.p``, by a uniformly drawn other class."""
    k = data.num_classes
    if k < 2:
        raise ValueError("label flipping needs at least two classes")
    rng = np.random.default_rng(spec.seed)
    n = len(data)
    flip = rng.random(n) < spec.p
    # offset in 1..k-1 maps every label to each of the other k-1 classes equally often
    offsets = rng.integers(1, k, size=n)
    labels = np.where(flip, (data.labels + offsets) % k, data.labels)
    return data.with_labels(labels)


def free_rider_update(strategy: FreeRiderStrategy, global_params: ModelParams,
                      round: int) -> ModelParams:
    if strategy.kind == "echo_global":
        return ModelParams(global_params.weights, global_params.biases)
    rng = np.random.default_rng([strategy.seed, round])
    shape = global_params.shape
    noise_w = rng.standard_normal(shape)
    noise_b = rng.standard_normal(shape[0])
    if strategy.kind == "random_params":
        return ModelParams(strategy.scale * noise_w, strategy.scale * noise_b)
    if strategy.noise_scale == 0:
        return ModelParams(global_params.weights, global_params.biases)
    return ModelParams(global_params.weights + strategy.noise_scale * noise_w,
                       global_params.biases + strategy.noise_scale * noise_b)


def poison_update(strategy: PoisonStrategy, honest_params: ModelParams,
                  round: int = 0) -> ModelParams:
    """Corrupt honestly trained parameters. Noise is seeded by ``(strategy.seed, round)``."""
    if strategy.kind == "sign_flip":
        return ModelParams(-honest_params.weights, -honest_params.biases)
    if strategy.scale == 0:
        return ModelParams(honest_params.weights, honest_params.biases)
    rng = np.random.default_rng([strategy.seed, round])
    return ModelParams(
        honest_params.weights + strategy.scale * rng.standard_normal(honest_params.shape),
        honest_params.biases + strategy.scale * rng.standard_normal(honest_params.num_classes),
    )
