"""Quadratic Invariant Point Attention.

This is the direct formulation: the (H, L, L) logit tensor and the dense
(L, L, d_z) pair tensor are materialised. It serves as the correctness
oracle for :mod:`flashipa.flash_ipa` and as the baseline arm of the scaling
benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .attention_kernel import MAX_HEAD_DIM
from .geometry import FrameSet
from .pair_features import FactorizedPair, dense_pair_from_factors
from .tensor_core import Rng, concat_last, dtype_of, gaussian, linear, softmax_rows, track


class HeadDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class IpaConfig:
    d_in: int = 64
    d_z: int = 8
    n_heads: int = 4
    c: int = 16
    n_query: int = 4
    n_value: int = 8
    rank: int = 2
    precision: str = "f64"
    enforce_head_cap: bool = True

    def __post_init__(self):
        for f in ("d_in", "d_z", "n_heads", "c", "n_query", "n_value", "rank"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")
        dtype_of(self.precision)
        if self.enforce_head_cap and max(self.qk_dim, self.v_dim) > MAX_HEAD_DIM:
            raise HeadDimensionError(
                f"lifted head dimension {max(self.qk_dim, self.v_dim)} exceeds {MAX_HEAD_DIM}; "
                "lower c, point counts, rank or d_z, or set enforce_head_cap=False")

    @property
    def qk_dim(self) -> int:
        return self.c + 5 * self.n_query + self.rank * self.d_z

    @property
    def v_dim(self) -> int:
        return self.c + 3 * self.n_value + self.rank * self.d_z

    @property
    def dtype(self) -> np.dtype:
        return dtype_of(self.precision)

    @property
    def output_features(self) -> int:
        return self.n_heads * (self.d_z + self.c + 4 * self.n_value)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class IpaWeights:
    """Learned maps, stored (fan_in, fan_out)."""

    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_qp: np.ndarray
    b_qp: np.ndarray
    w_kp: np.ndarray
    b_kp: np.ndarray
    w_vp: np.ndarray
    b_vp: np.ndarray
    pair_bias: np.ndarray  # (H, d_z)
    gamma_raw: np.ndarray  # (H,)
    w_out: np.ndarray
    b_out: np.ndarray
    w_L: float = math.sqrt(1.0 / 3.0)
    w_C: float = 1.0

    @property
    def gamma(self) -> np.ndarray:
        return softplus(self.gamma_raw)

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("w_L", "w_C")}

    def astype(self, dtype) -> "IpaWeights":
        arrays = {k: v.astype(dtype) for k, v in self.arrays().items()}
        return IpaWeights(**arrays, w_L=self.w_L, w_C=self.w_C)


GAMMA_RAW_FOR_ONE = math.log(math.e - 1.0)


def init_weights(config: IpaConfig, rng: Rng) -> IpaWeights:
    """Gaussian weights scaled by 1/sqrt(fan_in), gamma = 1, AF2 constants."""
    H, d, dt = config.n_heads, config.d_in, np.float64

    def dense(fan_in, fan_out):
        return gaussian(rng, (fan_in, fan_out), dt, 1.0 / math.sqrt(fan_in)), gaussian(rng, fan_out, dt, 0.1)

    w_q, b_q = dense(d, H * config.c)
    w_k, b_k = dense(d, H * config.c)
    w_v, b_v = dense(d, H * config.c)
    w_qp, b_qp = dense(d, H * config.n_query * 3)
    w_kp, b_kp = dense(d, H * config.n_query * 3)
    w_vp, b_vp = dense(d, H * config.n_value * 3)
    pair_bias = gaussian(rng, (H, config.d_z), dt, 1.0 / math.sqrt(config.d_z))
    w_out, b_out = dense(config.output_features, d)
    weights = IpaWeights(
        w_q, b_q, w_k, b_k, w_v, b_v, w_qp, b_qp, w_kp, b_kp, w_vp, b_vp,
        pair_bias=pair_bias,
        gamma_raw=np.full(H, GAMMA_RAW_FOR_ONE),
        w_out=w_out, b_out=b_out,
        w_L=math.sqrt(1.0 / 3.0),
        w_C=math.sqrt(2.0 / (9.0 * config.n_query)),
    )
    return weights.astype(config.dtype)


class Projections(NamedTuple):
    q: np.ndarray    # (H, L, c)
    k: np.ndarray
    v: np.ndarray
    q_pts: np.ndarray  # (H, L, N_query, 3), local frame
    k_pts: np.ndarray
    v_pts: np.ndarray  # (H, L, N_value, 3)


def _heads(x: np.ndarray, H: int, *tail: int) -> np.ndarray:
    L = x.shape[0]
    return np.moveaxis(x.reshape((L, H) + tail), 0, 1)


def project_inputs(s: np.ndarray, w: IpaWeights, config: IpaConfig) -> Projections:
    H = config.n_heads
    if s.shape[-1] != config.d_in:
        raise ValueError(f"single representation width {s.shape[-1]} != d_in {config.d_in}")
    return Projections(
        _heads(linear(s, w.w_q, w.b_q), H, config.c),
        _heads(linear(s, w.w_k, w.b_k), H, config.c),
        _heads(linear(s, w.w_v, w.b_v), H, config.c),
        _heads(linear(s, w.w_qp, w.b_qp), H, config.n_query, 3),
        _heads(linear(s, w.w_kp, w.b_kp), H, config.n_query, 3),
        _heads(linear(s, w.w_vp, w.b_vp), H, config.n_value, 3),
    )


def _squared_distances(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    """sum_p ||a[i, p] - b[j, p]||^2 for a, b of shape (L, P, 3), row-chunked."""
    L = a.shape[0]
    out = track(np.empty((L, b.shape[0]), dtype=a.dtype))
    for start in range(0, L, chunk):
        diff = a[start:start + chunk, None] - b[None]
        out[start:start + chunk] = np.einsum("ijpx,ijpx->ij", diff, diff)
    return out


def attention_logits(q, k, q_pts, k_pts, frames: FrameSet, bias, w: IpaWeights) -> np.ndarray:
    """w_L * (q.k / sqrt(c) + b_ij - gamma w_C / 2 * sum_p ||T_i q_p - T_j k_p||^2)."""
    H, L, c = q.shape
    gq = frames.apply_points(q_pts)
    gk = frames.apply_points(k_pts)
    gamma = w.gamma
    logits = track(np.empty((H, L, L), dtype=q.dtype))
    for h in range(H):
        scalar = np.matmul(q[h], k[h].T) / math.sqrt(c)
        dist = _squared_distances(gq[h], gk[h])
        dist *= gamma[h] * w.w_C / 2
        logits[h] = w.w_L * (scalar + bias[h] - dist)
        del dist
    return logits


def output_projection(pair_out, scalar_out, local_pts, w: IpaWeights) -> np.ndarray:
    """Linear(concat(pair, scalar, points, point norms)) over all heads.

    pair_out (H, L, d_z), scalar_out (H, L, c), local_pts (H, L, N_value, 3).
    Features are grouped by kind, each block head-major.
    """
    H, L = scalar_out.shape[:2]

    def flat(x):
        return np.moveaxis(x, 0, 1).reshape(L, -1)

    norms = np.sqrt(np.sum(local_pts * local_pts, axis=-1))
    feats = concat_last([flat(pair_out), flat(scalar_out), flat(local_pts.reshape(H, L, -1)), flat(norms)])
    return linear(feats, w.w_out, w.b_out)


def reference_forward(s, frames: FrameSet, w: IpaWeights, config: IpaConfig, *,
                      pair: np.ndarray | None = None, factors: FactorizedPair | None = None,
                      return_attention: bool = False):
    """Single IPA layer. Give exactly one of a dense ``pair`` (L, L, d_z) or
    ``factors``; factors are expanded densely here.
    """
    if (pair is None) == (factors is None):
        raise TypeError("reference_forward needs exactly one of pair= or factors=")
    dtype = config.dtype
    s = np.asarray(s, dtype=dtype)
    frames = frames.astype(dtype)
    H, L = config.n_heads, s.shape[0]
    z = dense_pair_from_factors(factors.astype(dtype)) if pair is None else np.asarray(pair, dtype=dtype)
    if z.shape != (L, L, config.d_z):
        raise ValueError(f"pair tensor must be ({L}, {L}, {config.d_z}); got {z.shape}")

    proj = project_inputs(s, w, config)
    bias = track(np.tensordot(w.pair_bias, z, axes=([1], [2])))
    logits = attention_logits(proj.q, proj.k, proj.q_pts, proj.k_pts, frames, bias, w)
    del bias
    mask = frames.mask
    if not mask.all():
        logits[:, :, ~mask] = np.finfo(dtype).min
    a = softmax_rows(logits)
    del logits

    pair_out = track(np.empty((H, L, config.d_z), dtype=dtype))
    for h in range(H):
        pair_out[h] = np.matmul(a[h][:, None, :], z)[:, 0, :]
    scalar_out = track(np.matmul(a, proj.v))
    gv = frames.apply_points(proj.v_pts).reshape(H, L, -1)
    agg = track(np.matmul(a, gv)).reshape(H, L, config.n_value, 3)
    local_pts = frames.apply_inverse_points(agg)
    out = output_projection(pair_out, scalar_out, local_pts, w)
    if return_attention:
        return out, a
    return out
