"""Exact softmax attention, naive and tiled (online softmax).

Both functions compute ``softmax(Q K^T) V`` with no internal scaling and an
optional boolean key mask of shape (L_k,). Inputs may carry leading batch
axes (e.g. heads); tiles are taken along the sequence axes only.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .tensor_core import empty, matmul, softmax_rows, track

MAX_HEAD_DIM = 256


class HeadDimensionWarning(UserWarning):
    pass


class EmptyRowWarning(RuntimeWarning):
    """Raised when some query row has no unmasked key; the row is zeroed."""


@dataclass(frozen=True)
class TileSpec:
    block_rows: int = 64
    block_cols: int = 64

    def __post_init__(self):
        if self.block_rows < 1 or self.block_cols < 1:
            raise ValueError("tile sizes must be >= 1")


def _check(Q, K, V, mask):
    if Q.shape[-1] != K.shape[-1]:
        raise ValueError(f"query/key widths differ: {Q.shape} vs {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise ValueError(f"key/value lengths differ: {K.shape} vs {V.shape}")
    if mask is not None and mask.shape != (K.shape[-2],):
        raise ValueError(f"mask must have shape ({K.shape[-2]},)")


def naive_attention(Q, K, V, mask=None):
    """Materialises the full score matrix; used as the oracle."""
    _check(Q, K, V, mask)
    S = matmul(Q, np.swapaxes(K, -1, -2))
    if mask is not None:
        S[..., ~mask] = np.finfo(S.dtype).min
    P = softmax_rows(S)
    del S
    out = matmul(P, V)
    if mask is not None and not mask.any():
        out[...] = 0
    return out


def _row_block(Q_i, K, V, mask, block_cols):
    """Online softmax over column blocks for one row block.

    Returns the unnormalised accumulator, the running max and the running
    denominator after the last column block.
    """
    dtype = Q_i.dtype
    batch = Q_i.shape[:-2]
    rows = Q_i.shape[-2]
    n_keys = K.shape[-2]
    cols = min(block_cols, n_keys)
    S_buf = empty(batch + (rows, cols), dtype)
    PV = empty(batch + (rows, V.shape[-1]), dtype)
    acc = track(np.zeros(batch + (rows, V.shape[-1]), dtype))
    m = track(np.full(batch + (rows, 1), -np.inf, dtype))
    l = track(np.zeros(batch + (rows, 1), dtype))
    for start in range(0, n_keys, block_cols):
        stop = min(start + block_cols, n_keys)
        S = S_buf[..., : stop - start]
        np.matmul(Q_i, np.swapaxes(K[..., start:stop, :], -1, -2), out=S)
        if mask is not None:
            S[..., ~mask[start:stop]] = -np.inf
        m_new = np.maximum(m, S.max(axis=-1, keepdims=True))
        # rows with nothing unmasked yet keep m = -inf; shift by 0 there
        shift = np.where(np.isneginf(m_new), 0.0, m_new).astype(dtype, copy=False)
        np.subtract(S, shift, out=S)
        np.exp(S, out=S)  # S now holds P~
        alpha = np.exp(m - shift)
        l *= alpha
        l += S.sum(axis=-1, keepdims=True)
        acc *= alpha
        np.matmul(S, V[..., start:stop, :], out=PV)
        acc += PV
        m = m_new
    return acc, m, l


def flash_attention(Q, K, V, mask=None, tiles: TileSpec = TileSpec(), threads: int = 1,
                    head_cap: int | None = MAX_HEAD_DIM, return_empty_rows: bool = False):
    """Tiled attention with O(B_r * B_c + B_r * d_v) scratch per row block.

    Fully masked query rows (possible only when ``mask`` masks every key)
    produce zeros and an :class:`EmptyRowWarning`. With
    ``return_empty_rows=True`` a boolean array marking them is returned too.
    """
    _check(Q, K, V, mask)
    d = max(Q.shape[-1], V.shape[-1])
    if head_cap is not None and d > head_cap:
        warnings.warn(f"head dimension {d} exceeds the usual fused-kernel limit of {head_cap}",
                      HeadDimensionWarning, stacklevel=2)
    n_rows = Q.shape[-2]
    out = empty(Q.shape[:-1] + (V.shape[-1],), np.result_type(Q, V))
    empty_rows = np.zeros(Q.shape[:-1], dtype=bool)

    def run(start):
        stop = min(start + tiles.block_rows, n_rows)
        acc, _, l = _row_block(Q[..., start:stop, :], K, V, mask, tiles.block_cols)
        dead = l[..., 0] == 0
        if dead.any():
            empty_rows[..., start:stop] = dead
            l = np.where(l == 0, 1, l)
        np.divide(acc, l, out=out[..., start:stop, :])

    starts = range(0, n_rows, tiles.block_rows)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    if empty_rows.any():
        warnings.warn(f"{int(empty_rows.sum())} query rows attend to no key; returned zeros",
                      EmptyRowWarning, stacklevel=2)
    if return_empty_rows:
        return out, empty_rows
    return out
