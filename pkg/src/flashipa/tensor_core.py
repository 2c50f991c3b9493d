"""Dense array substrate: precision handling, a counter-based RNG and an
allocation ledger used as a stand-in for accelerator memory accounting.

Tensors are plain ``numpy.ndarray`` objects. Every helper in this module that
creates a new buffer registers it with the active :class:`AllocationLedger`
(when enabled), so benchmark code can read back the peak number of bytes the
algorithm itself allocated, independent of interpreter noise.
"""

from __future__ import annotations

import contextlib
import math
import threading
import weakref
from typing import Iterator, Sequence

import numpy as np

PRECISIONS = {"f32": np.float32, "f64": np.float64}


def dtype_of(precision: str) -> np.dtype:
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; expected one of {sorted(PRECISIONS)}") from None


def precision_of(dtype) -> str:
    dtype = np.dtype(dtype)
    for name, t in PRECISIONS.items():
        if dtype == np.dtype(t):
            return name
    raise ValueError(f"unsupported dtype {dtype}")


# ---------------------------------------------------------------------------
# allocation ledger


class AllocationLedger:
    """Tracks bytes of buffers registered through this module.

    ``current`` and ``peak`` are running totals; ``largest`` is the biggest
    single buffer seen since the last reset.

    Buffers are released from the running total when the array object is
    garbage collected. ``reset`` starts a new epoch: buffers registered before
    the reset no longer count, and their later release is ignored.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._epoch = 0
        self.enabled = False
        self.current = 0
        self.peak = 0
        self.largest = 0

    def reset(self) -> None:
        with self._lock:
            self._epoch += 1
            self.current = 0
            self.peak = 0
            self.largest = 0

    def register(self, arr: np.ndarray) -> np.ndarray:
        if not self.enabled:
            return arr
        nbytes = int(arr.nbytes)
        with self._lock:
            self.current += nbytes
            if self.current > self.peak:
                self.peak = self.current
            if nbytes > self.largest:
                self.largest = nbytes
            epoch = self._epoch
        weakref.finalize(arr, self._release, nbytes, epoch)
        return arr

    def _release(self, nbytes: int, epoch: int) -> None:
        with self._lock:
            if epoch == self._epoch:
                self.current -= nbytes


LEDGER = AllocationLedger()


def track(arr: np.ndarray) -> np.ndarray:
    """Register a freshly allocated buffer with the global ledger."""
    return LEDGER.register(arr)


@contextlib.contextmanager
def tracking(ledger: AllocationLedger = LEDGER) -> Iterator[AllocationLedger]:
    """Enable and reset ``ledger`` for the duration of the block."""
    previous = ledger.enabled
    ledger.reset()
    ledger.enabled = True
    try:
        yield ledger
    finally:
        ledger.enabled = previous


# ---------------------------------------------------------------------------
# random numbers


class Rng:
    """Counter-based Philox4x64 stream keyed by a 64-bit seed.

    Uniforms are built from the raw 64-bit words (top 53 bits), and Gaussians
    use Box-Muller on pairs of uniforms, so the stream only depends on the
    Philox bit generator, which numpy keeps stable across platforms.
    """

    def __init__(self, seed: int) -> None:
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self._bits = np.random.Philox(key=self.seed)

    @property
    def counter(self) -> int:
        state = self._bits.state["state"]["counter"]
        return int(sum(int(c) << (64 * i) for i, c in enumerate(state)))

    def uniform(self, size: int) -> np.ndarray:
        """``size`` doubles in [0, 1)."""
        raw = self._bits.random_raw(size)
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, size: int) -> np.ndarray:
        pairs = (size + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * math.pi * u[:, 1]
        out = np.empty((pairs, 2))
        out[:, 0] = radius * np.cos(theta)
        out[:, 1] = radius * np.sin(theta)
        return out.reshape(-1)[:size]


def gaussian(rng: Rng, shape: Sequence[int] | int, dtype=np.float64, scale: float = 1.0) -> np.ndarray:
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    n = int(np.prod(shape, dtype=np.int64))
    out = (scale * rng.normal(n)).reshape(shape).astype(dtype)
    return track(out)


# ---------------------------------------------------------------------------
# tracked operations


def zeros(shape, dtype=np.float64) -> np.ndarray:
    return track(np.zeros(shape, dtype=dtype))


def empty(shape, dtype=np.float64) -> np.ndarray:
    return track(np.empty(shape, dtype=dtype))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return track(np.matmul(a, b))


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, with the row maximum subtracted first."""
    out = track(x - x.max(axis=-1, keepdims=True))
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)
    return out


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``x @ weight + bias`` with ``weight`` stored as (fan_in, fan_out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    out = matmul(x, weight)
    if bias is not None:
        out += bias
    return out


def concat_last(parts: Sequence[np.ndarray]) -> np.ndarray:
    return track(np.concatenate(parts, axis=-1))


def split_last(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Inverse of :func:`concat_last`; returns views into ``x``."""
    if sum(sizes) != x.shape[-1]:
        raise ValueError(f"split sizes {list(sizes)} do not sum to {x.shape[-1]}")
    bounds = np.cumsum(sizes)[:-1]
    return np.split(x, bounds, axis=-1)
