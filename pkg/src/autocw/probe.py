"""Per-offset input-gradient norms of a context-window classifier."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .features import ContextWindowSpec
from .nn import MlpModel, TrainingError, _check_input, _check_labels, input_gradient


@dataclass(frozen=True)
class GradientProfile:
    """``norms[i]`` is the gradient norm at offset ``p = i - (cw_max - 1) // 2``."""

    cw_max: int
    norms: np.ndarray
    n_minibatches: int

    def __post_init__(self):
        norms = np.asarray(self.norms, dtype=np.float64)
        if self.cw_max < 1 or self.cw_max % 2 == 0:
            raise ValueError("cw_max must be a positive odd integer")
        if norms.shape != (self.cw_max,):
            raise ValueError(f"expected {self.cw_max} norms, got {norms.shape}")
        if np.any(norms < 0) or not np.all(np.isfinite(norms)):
            raise ValueError("gradient norms must be finite and non-negative")
        object.__setattr__(self, "norms", norms)

    @property
    def half(self) -> int:
        return (self.cw_max - 1) // 2

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.half, self.half + 1)

    def norm(self, p: int) -> float:
        if abs(p) > self.half:
            raise KeyError(p)
        return float(self.norms[p + self.half])

    def as_dict(self) -> dict[int, float]:
        return {int(p): float(v) for p, v in zip(self.offsets, self.norms)}

    @classmethod
    def from_dict(cls, norms: dict[int, float], n_minibatches: int = 0) -> "GradientProfile":
        half = max(abs(p) for p in norms)
        if set(norms) != set(range(-half, half + 1)):
            raise ValueError("profile offsets must cover a symmetric range")
        return cls(2 * half + 1, np.array([norms[p] for p in range(-half, half + 1)]), n_minibatches)

    def mirrored(self) -> "GradientProfile":
        return GradientProfile(self.cw_max, self.norms[::-1].copy(), self.n_minibatches)

    def past_future_ratio(self) -> float:
        """Summed norms over p < 0 divided by the sum over p > 0."""
        future = float(self.norms[self.half + 1:].sum())
        if future == 0:
            raise ZeroDivisionError("no gradient mass on future offsets")
        return float(self.norms[:self.half].sum()) / future


def gradient_profile(model: MlpModel, data, spec: ContextWindowSpec, batch_size: int,
                     mode: str = "batch", seed: int | None = None) -> GradientProfile:
    """Mean over minibatches of the per-offset norm of the summed-loss input gradient.

    The gradient of a minibatch's summed cross-entropy w.r.t. its inputs is an
    ``(n_examples, cw * n_fea)`` matrix. ``mode="batch"`` takes the Euclidean
    norm of each offset's ``(n_examples, n_fea)`` block and averages across
    minibatches. ``mode="example"`` instead averages the
    per-example block norms over all examples. Minibatches are consecutive
    rows, after a seeded shuffle when ``seed`` is given.
    """
    if spec.n_past != spec.n_future:
        raise ValueError(f"probe window must be symmetric, got {spec}")
    if mode not in ("batch", "example"):
        raise ValueError(f"unknown mode {mode!r}")
    x, y = data
    x = _check_input(model, x)
    y = _check_labels(model, y, x.shape[0])
    if x.shape[0] == 0:
        raise TrainingError("empty probe data")
    cw = spec.length
    if x.shape[1] % cw:
        raise ValueError(f"input width {x.shape[1]} is not a multiple of the window length {cw}")
    n_fea = x.shape[1] // cw
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(x.shape[0])
    if seed is not None:
        order = np.random.default_rng(seed).permutation(x.shape[0])

    rows = []
    for start in range(0, order.size, batch_size):
        idx = order[start:start + batch_size]
        g = input_gradient(model, x[idx], y[idx]).reshape(idx.size, cw, n_fea)
        if mode == "batch":
            rows.append(np.sqrt(np.sum(g * g, axis=(0, 2))))
        else:
            rows.extend(np.linalg.norm(g, axis=2))
    stacked = np.asarray(rows)
    norms = np.array([math.fsum(col) / stacked.shape[0] for col in stacked.T])
    n_batches = math.ceil(order.size / batch_size)
    return GradientProfile(cw, norms, n_batches)


def write_profile_csv(path, profile: GradientProfile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "norm"])
        for p, v in zip(profile.offsets, profile.norms):
            w.writerow([int(p), repr(float(v))])


def read_profile_csv(path) -> GradientProfile:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return GradientProfile.from_dict({int(r["p"]): float(r["norm"]) for r in rows})
