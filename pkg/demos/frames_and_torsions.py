"""
Backbone frames and torsion angles
==================================

Build per-residue rigid frames from a toy backbone, move the whole chain,
and watch which quantities change and which do not.
"""

import numpy as np

from flashipa.geometry import FrameSet, apply, random_rototranslation, torsion_angle
from flashipa.tensor_core import Rng

rng = Rng(0)

# a short helical chain of (N, CA, C) atoms: 100 degrees and 1.5 A rise per residue
L = 6
turn = np.radians(100.0) * np.arange(L)
ca = np.stack([2.3 * np.cos(turn), 2.3 * np.sin(turn), 1.5 * np.arange(L)], axis=1)
n = ca + np.array([-0.5, 1.2, 0.3])
c = ca + np.array([1.4, -0.4, 0.2])

# Gram-Schmidt: the first axis points CA -> C, the second lies in the N-CA-C plane
frames = FrameSet.from_backbone(n, ca, c)
print("frame 0 rotation:\n", frames.rotations[0].round(3))

# one random global motion applied to every atom
g = random_rototranslation(rng, translation_scale=10.0)
moved = FrameSet.from_backbone(apply(g, n), apply(g, ca), apply(g, c))

# the frames move with the atoms (equivariance) ...
print("translations moved:", not np.allclose(moved.translations, frames.translations))
print("T_i -> g T_i:", np.allclose(moved.translations, apply(g, frames.translations)))

# ... but local coordinates of other atoms do not (invariance)
local = frames.apply_inverse_points(np.broadcast_to(ca[None], (L, L, 3)).copy())
local_moved = moved.apply_inverse_points(np.broadcast_to(apply(g, ca)[None], (L, L, 3)).copy())
print("local coordinates unchanged:", np.allclose(local, local_moved))

# backbone-style dihedral over consecutive CA atoms
phi = torsion_angle(ca[:-3], ca[1:-2], ca[2:-1], ca[3:])
phi_moved = torsion_angle(*(apply(g, ca)[i:L - 3 + i] for i in range(4)))
print("CA dihedrals (deg):", np.degrees(phi).round(2))
print("same after motion:", np.allclose(phi, phi_moved))
