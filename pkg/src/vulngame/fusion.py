"""Sample-feature fusion over per-path sequence vectors.

The N path vectors of one sample are concatenated into a single length-N*d
signal (one input channel); a 1-D convolution runs over it, a global max-pool
keeps one scalar per output channel, and the pooled values are concatenated
with the raw signal. Feature dimension is therefore
``out_channels * len(kernel_sizes) + N * d``.

Forward and backward passes are written out explicitly so gradient tests
check this module's own arithmetic, not a framework's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class ConvConfig:
    embed_dim: int = 16
    n_paths: int = 3
    out_channels: int = 8
    kernel_sizes: tuple[int, ...] = (3,)

    def __post_init__(self):
        if self.embed_dim < 1 or self.n_paths < 1 or self.out_channels < 1:
            raise FusionError("embed_dim, n_paths, and out_channels must be positive")
        if not self.kernel_sizes:
            raise FusionError("at least one kernel size is required")
        for k in self.kernel_sizes:
            if not 1 <= k <= self.signal_length:
                raise FusionError(
                    f"kernel size {k} must lie in [1, {self.signal_length}] "
                    f"(n_paths * embed_dim)")

    @property
    def signal_length(self) -> int:
        return self.n_paths * self.embed_dim

    @property
    def feature_dim(self) -> int:
        return self.out_channels * len(self.kernel_sizes) + self.signal_length


@dataclass
class FusionWeights:
    """One (out_channels, k) kernel stack and bias per kernel size."""

    w: list[np.ndarray]
    b: list[np.ndarray]

    def copy(self) -> "FusionWeights":
        return FusionWeights([w.copy() for w in self.w], [b.copy() for b in self.b])

    def tobytes(self) -> bytes:
        return b"".join(a.tobytes() for a in self.w + self.b)

    def add_scaled(self, grads: "FusionWeights", scale: float) -> None:
        for w, g in zip(self.w, grads.w):
            w += scale * g
        for b, g in zip(self.b, grads.b):
            b += scale * g


def init_fusion(config: ConvConfig, rng: np.random.Generator) -> FusionWeights:
    w = [rng.standard_normal((config.out_channels, k)) / np.sqrt(k)
         for k in config.kernel_sizes]
    b = [np.zeros(config.out_channels) for _ in config.kernel_sizes]
    return FusionWeights(w, b)


def zero_fusion(config: ConvConfig) -> FusionWeights:
    return FusionWeights([np.zeros((config.out_channels, k)) for k in config.kernel_sizes],
                         [np.zeros(config.out_channels) for _ in config.kernel_sizes])


def fuse_forward(u: np.ndarray, weights: FusionWeights):
    """Feature vector and backward cache for one concatenated signal ``u``."""
    pooled_parts = []
    argmaxes = []
    for w, b in zip(weights.w, weights.b):
        windows = sliding_window_view(u, w.shape[1])  # (L-k+1, k)
        conv = windows @ w.T + b  # (L-k+1, C)
        arg = np.argmax(conv, axis=0)  # first argmax per channel
        pooled_parts.append(conv[arg, np.arange(conv.shape[1])])
        argmaxes.append(arg)
    feature = np.concatenate(pooled_parts + [u])
    cache = (u, weights, argmaxes)
    return feature, cache


def fuse_backward(cache, d_feature: np.ndarray):
    """Gradients (d_weights, d_u) of a scalar loss given d(loss)/d(feature)."""
    u, weights, argmaxes = cache
    n_channels = weights.w[0].shape[0]
    d_w = [np.zeros_like(w) for w in weights.w]
    d_b = [np.zeros_like(b) for b in weights.b]
    d_u = d_feature[-u.shape[0]:].copy()
    offset = 0
    for m, (w, arg) in enumerate(zip(weights.w, argmaxes)):
        k = w.shape[1]
        d_pool = d_feature[offset:offset + n_channels]
        offset += n_channels
        for c in range(n_channels):
            t = arg[c]
            d_w[m][c] += d_pool[c] * u[t:t + k]
            d_b[m][c] += d_pool[c]
            d_u[t:t + k] += d_pool[c] * w[c]
    return FusionWeights(d_w, d_b), d_u


def fuse_paths(embeddings, config: ConvConfig, weights: FusionWeights) -> np.ndarray:
    """Sample feature from exactly ``n_paths`` path embeddings of ``embed_dim``."""
    mat = np.asarray(embeddings, dtype=float)
    if mat.shape != (config.n_paths, config.embed_dim):
        raise FusionError(
            f"expected {config.n_paths} embeddings of dimension {config.embed_dim}, "
            f"got array of shape {mat.shape}")
    feature, _ = fuse_forward(mat.reshape(-1), weights)
    return feature
