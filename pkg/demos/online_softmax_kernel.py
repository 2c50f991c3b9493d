"""
Tiled attention with an online softmax
======================================

The tiled kernel never holds a full L x L score matrix. Each row block keeps
a running maximum and a running denominator; when a new column block raises
the maximum, everything accumulated so far is rescaled by exp(m_old - m_new).
"""

import numpy as np

from flashipa.attention_kernel import TileSpec, flash_attention, naive_attention
from flashipa.tensor_core import Rng, gaussian, tracking

rng = Rng(1)
L, d = 1000, 32
Q, K, V = (gaussian(rng, (L, d)) for _ in range(3))

# same answer as the dense softmax, up to rounding
exact = naive_attention(Q, K, V)
for tiles in (TileSpec(1, 1), TileSpec(7, 13), TileSpec(64, 64)):
    print(tiles, "max |diff| =", np.abs(flash_attention(Q, K, V, tiles=tiles) - exact).max())

# the running max keeps exp() in range even for huge logits
big = flash_attention(300 * Q, K, V, tiles=TileSpec(32, 32))
print("finite at logits ~1e3:", np.isfinite(big).all())

# peak tracked bytes: quadratic for the dense version, linear for the tiled one
for n in (500, 1000, 2000):
    q, k, v = (gaussian(rng, (n, d)) for _ in range(3))
    with tracking() as ledger:
        naive_attention(q, k, v)
    dense_peak = ledger.peak
    with tracking() as ledger:
        flash_attention(q, k, v)
    print(f"L={n:5d}  naive peak {dense_peak / 1e6:7.2f} MB   tiled peak {ledger.peak / 1e6:6.2f} MB")
