"""Factorized pair representations and k-nearest-neighbour distograms.

A pair tensor z of shape (L, L, d_z) is never stored; instead two factors
z1, z2 of shape (L, r, d_z) define it through a contraction over the rank
axis only::

    z[i, j, d] = sum_rho z1[i, rho, d] * z2[j, rho, d]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import Rng, gaussian, linear, track


@dataclass(frozen=True)
class FactorizedPair:
    z1: np.ndarray
    z2: np.ndarray

    def __post_init__(self):
        if self.z1.shape != self.z2.shape or self.z1.ndim != 3:
            raise ValueError(f"factor shapes must match and be (L, r, d_z); got {self.z1.shape}, {self.z2.shape}")

    @property
    def length(self) -> int:
        return self.z1.shape[0]

    @property
    def rank(self) -> int:
        return self.z1.shape[1]

    @property
    def d_z(self) -> int:
        return self.z1.shape[2]

    def astype(self, dtype) -> "FactorizedPair":
        return FactorizedPair(self.z1.astype(dtype), self.z2.astype(dtype))


@dataclass(frozen=True)
class DistogramSpec:
    k: int = 20
    n_bins: int = 22
    d_min: float = 2.0
    d_max: float = 22.0
    pe_dim: int = 16

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if not self.d_min < self.d_max:
            raise ValueError("d_min must be below d_max")
        if self.pe_dim % 2:
            raise ValueError("pe_dim must be even")

    @property
    def width(self) -> int:
        return self.n_bins + self.pe_dim


@dataclass
class FactorWeights:
    """Two independent affine maps, features -> (r * d_z)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def astype(self, dtype) -> "FactorWeights":
        return FactorWeights(*(a.astype(dtype) for a in (self.w1, self.b1, self.w2, self.b2)))


def init_factor_weights(rng: Rng, n_features: int, rank: int, d_z: int, dtype=np.float64) -> FactorWeights:
    out = rank * d_z
    scale = 1.0 / np.sqrt(max(n_features, 1))
    return FactorWeights(
        gaussian(rng, (n_features, out), dtype, scale),
        gaussian(rng, out, dtype, 0.1),
        gaussian(rng, (n_features, out), dtype, scale),
        gaussian(rng, out, dtype, 0.1),
    )


def positional_encoding(offsets, dim: int) -> np.ndarray:
    """Interleaved sin/cos pairs at geometric frequencies 10000^(-2k/dim)."""
    if dim % 2:
        raise ValueError("positional encoding width must be even")
    offsets = np.asarray(offsets, dtype=np.float64)
    freqs = 10000.0 ** (-np.arange(dim // 2) * 2.0 / dim)
    angles = offsets[..., None] * freqs
    out = np.empty(offsets.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def knn_indices(points: np.ndarray, k: int, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the k nearest other points.

    Rows are processed in chunks so memory stays O(chunk * L). Equal
    distances are resolved in favour of the lower index (stable sort).
    """
    points = np.asarray(points, dtype=np.float64)
    L = points.shape[0]
    if L < 2:
        raise ValueError("need at least two points for neighbour search")
    if not 1 <= k <= L - 1:
        raise ValueError(f"k={k} must lie in [1, L-1={L - 1}]")
    idx = np.empty((L, k), dtype=np.int64)
    dist = np.empty((L, k))
    for start in range(0, L, chunk):
        stop = min(start + chunk, L)
        diff = points[start:stop, None, :] - points[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        rows = np.arange(stop - start)
        d[rows, rows + start] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        dist[start:stop] = np.take_along_axis(d, order, axis=1)
    return idx, dist


def distance_one_hot(dist: np.ndarray, spec: DistogramSpec) -> np.ndarray:
    """Uniform bins on [d_min, d_max]; out-of-range values land in end bins."""
    width = (spec.d_max - spec.d_min) / spec.n_bins
    bins = np.floor((dist - spec.d_min) / width).astype(np.int64)
    bins = np.clip(bins, 0, spec.n_bins - 1)
    return np.eye(spec.n_bins)[bins]


def knn_distogram(translations: np.ndarray, spec: DistogramSpec) -> np.ndarray:
    """(L, k, n_bins + pe_dim): neighbour distance one-hots + offset encodings."""
    translations = np.asarray(translations, dtype=np.float64)
    L = translations.shape[0]
    if spec.k > L - 1:
        raise ValueError(f"distogram k={spec.k} exceeds L-1={L - 1}")
    idx, dist = knn_indices(translations, spec.k)
    offsets = idx - np.arange(L)[:, None]
    return np.concatenate([distance_one_hot(dist, spec), positional_encoding(offsets, spec.pe_dim)], axis=-1)


def build_factors(features: np.ndarray, rank: int, d_z: int, weights: FactorWeights) -> FactorizedPair:
    """Project per-residue features (L, f) into the two pair factors."""
    L = features.shape[0]
    if weights.w1.shape != (features.shape[1], rank * d_z) or weights.w2.shape != weights.w1.shape:
        raise ValueError(f"factor weights {weights.w1.shape} inconsistent with f={features.shape[1]}, r={rank}, d_z={d_z}")
    z1 = linear(features, weights.w1, weights.b1).reshape(L, rank, d_z)
    z2 = linear(features, weights.w2, weights.b2).reshape(L, rank, d_z)
    return FactorizedPair(z1, z2)


def dense_pair_from_factors(fp: FactorizedPair) -> np.ndarray:
    """Materialise the (L, L, d_z) pair tensor. Quadratic memory."""
    return track(np.einsum("ird,jrd->ijd", fp.z1, fp.z2))


def bias_factors(fp: FactorizedPair, head_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-head bias factors b1, b2 of shape (L, H, r * d_z).

    <b1[i, h], b2[j, h]> = sum_d head_weights[h, d] * z[i, j, d], i.e. the
    linear pair bias without ever forming z.
    """
    L, r, d_z = fp.z1.shape
    H = head_weights.shape[0]
    if head_weights.shape != (H, d_z):
        raise ValueError(f"head weights must be (H, {d_z}); got {head_weights.shape}")
    b1 = track(np.broadcast_to(fp.z1.reshape(L, 1, r * d_z), (L, H, r * d_z)).copy())
    b2 = track((head_weights[None, :, None, :] * fp.z2[:, None, :, :]).reshape(L, H, r * d_z))
    return b1, b2
