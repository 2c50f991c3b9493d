"""IPA as a single softmax(Q K^T) V through the tiled kernel.

Expanding the point term with ||a - b||^2 = ||a||^2 - 2 a.b + ||b||^2 turns
the whole IPA logit into one inner product of lifted vectors::

    q_hat = [ q            | T_i q_p          | ||T_i q_p||^2 | 1            | b1 ]
    k_hat = [ w_L/sqrt(c) k | g T_j k_p        | -g/2          | -g/2 ||T_j k_p||^2 | b2 ]

with g = gamma * w_L * w_C. The norm/ones blocks are deliberately swapped
between q_hat and k_hat so that each squared norm meets a constant. The
pair bias enters through b1, b2 (w_L folded into the head weights), and
the values carry z2 so the pair output can be contracted with z1 afterwards.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .attention_kernel import HeadDimensionWarning, MAX_HEAD_DIM, TileSpec, flash_attention
from .geometry import FrameSet
from .ipa_reference import IpaConfig, IpaWeights, output_projection, project_inputs
from .pair_features import FactorizedPair, bias_factors
from .tensor_core import concat_last, split_last, track

QUERY_SEGMENTS = ("scalar", "points", "norms", "ones", "bias")
KEY_SEGMENTS = ("scalar", "points", "ones", "norms", "bias")
VALUE_SEGMENTS = ("scalar", "points", "pair")


@dataclass
class LiftedQKV:
    q: np.ndarray  # (H, L, D_qk)
    k: np.ndarray
    v: np.ndarray  # (H, L, D_v)
    q_sizes: tuple[int, ...]
    k_sizes: tuple[int, ...]
    v_sizes: tuple[int, ...]

    def __post_init__(self):
        for arr, sizes in ((self.q, self.q_sizes), (self.k, self.k_sizes), (self.v, self.v_sizes)):
            if arr.shape[-1] != sum(sizes):
                raise ValueError(f"segment sizes {sizes} do not cover width {arr.shape[-1]}")


def _flat_points(frames: FrameSet, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Globalised points as (H, L, 3N) and their squared norms (H, L, N)."""
    g = frames.apply_points(pts)
    H, L, N, _ = g.shape
    return g.reshape(H, L, 3 * N), np.sum(g * g, axis=-1)


def _head_major(b: np.ndarray) -> np.ndarray:
    return np.moveaxis(b, 1, 0)


def lift_queries(q, q_pts, frames: FrameSet, b1) -> tuple[np.ndarray, tuple[int, ...]]:
    gq, norms = _flat_points(frames, q_pts)
    ones = np.ones_like(norms)
    parts = [q, gq, norms, ones, _head_major(b1).astype(q.dtype, copy=False)]
    return concat_last(parts), tuple(p.shape[-1] for p in parts)


def lift_keys(k, k_pts, frames: FrameSet, b2, w: IpaWeights) -> tuple[np.ndarray, tuple[int, ...]]:
    H, L, c = k.shape
    gk, norms = _flat_points(frames, k_pts)
    g = (w.gamma * w.w_L * w.w_C).astype(k.dtype)[:, None, None]
    parts = [
        (w.w_L / math.sqrt(c)) * k,
        g * gk,
        np.broadcast_to(-g / 2, norms.shape),
        (-g / 2) * norms,
        _head_major(b2).astype(k.dtype, copy=False),
    ]
    return concat_last(parts), tuple(p.shape[-1] for p in parts)


def lift_values(v, v_pts, frames: FrameSet, z2) -> tuple[np.ndarray, tuple[int, ...]]:
    H, L, _ = v.shape
    gv, _ = _flat_points(frames, v_pts)
    pair = np.broadcast_to(z2.reshape(1, L, -1), (H, L, z2.shape[1] * z2.shape[2])).astype(v.dtype, copy=False)
    parts = [v, gv, pair]
    return concat_last(parts), tuple(p.shape[-1] for p in parts)


def lift(s, factors: FactorizedPair, frames: FrameSet, w: IpaWeights, config: IpaConfig) -> LiftedQKV:
    proj = project_inputs(s, w, config)
    b1, b2 = bias_factors(factors, w.w_L * w.pair_bias)
    q, qs = lift_queries(proj.q, proj.q_pts, frames, b1)
    k, ks = lift_keys(proj.k, proj.k_pts, frames, b2, w)
    v, vs = lift_values(proj.v, proj.v_pts, frames, factors.z2)
    return LiftedQKV(q, k, v, qs, ks, vs)


def flash_ipa_forward(s, factors: FactorizedPair, frames: FrameSet, w: IpaWeights, config: IpaConfig,
                      tiles: TileSpec = TileSpec(), threads: int = 1) -> np.ndarray:
    """Single IPA layer in O(L) memory. Never allocates an L x L buffer."""
    dtype = config.dtype
    if max(config.qk_dim, config.v_dim) > MAX_HEAD_DIM:
        warnings.warn(f"lifted head dimension {max(config.qk_dim, config.v_dim)} exceeds {MAX_HEAD_DIM}",
                      HeadDimensionWarning, stacklevel=2)
    s = np.asarray(s, dtype=dtype)
    frames = frames.astype(dtype)
    factors = factors.astype(dtype)
    H, L = config.n_heads, s.shape[0]
    r, d_z = factors.rank, factors.d_z
    if (r, d_z) != (config.rank, config.d_z) or factors.length != L:
        raise ValueError(f"factors {factors.z1.shape} inconsistent with config and L={L}")

    lifted = lift(s, factors, frames, w, config)
    o_hat = flash_attention(lifted.q, lifted.k, lifted.v, frames.mask, tiles, threads=threads, head_cap=None)
    del lifted
    scalar_out, g_pts, pair_agg = split_last(o_hat, [config.c, 3 * config.n_value, r * d_z])
    local_pts = frames.apply_inverse_points(g_pts.reshape(H, L, config.n_value, 3))
    pair_out = track(np.einsum("ird,hird->hid", factors.z1, pair_agg.reshape(H, L, r, d_z)))
    return output_projection(pair_out, scalar_out, local_pts, w)
