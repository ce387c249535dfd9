from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Scaler:
    """Per-channel affine normalisation ``(v - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float).reshape(-1))
        if self.mean.shape != self.scale.shape:
            raise ValueError("mean and scale differ in length")
        if np.any(self.scale <= 0) or not np.all(np.isfinite(self.scale)):
            raise ValueError("scale entries must be positive and finite")

    @classmethod
    def fit(cls, data):
        data = np.asarray(data, dtype=float)
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        # a constant channel carries no scale information
        std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
        return cls(mean, std)

    @classmethod
    def identity(cls, n):
        return cls(np.zeros(n), np.ones(n))

    def __len__(self):
        return self.mean.size

    def transform(self, v):
        return (np.asarray(v, dtype=float) - self.mean) / self.scale

    def inverse(self, v):
        return np.asarray(v, dtype=float) * self.scale + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["scale"])
