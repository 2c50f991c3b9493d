"""Rigid frames T = (R, t), backbone frame construction and dihedral angles.

All functions broadcast over leading axes, so a stack of frames is simply a
``RigidTransform`` whose rotation has shape (..., 3, 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import Rng

DEGENERACY_EPS = 1e-8


class SingularFrameError(ValueError):
    pass


class UndefinedDihedralError(ValueError):
    pass


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls, batch: tuple[int, ...] = (), dtype=np.float64) -> "RigidTransform":
        rot = np.broadcast_to(np.eye(3, dtype=dtype), batch + (3, 3)).copy()
        return cls(rot, np.zeros(batch + (3,), dtype=dtype))

    def astype(self, dtype) -> "RigidTransform":
        return RigidTransform(self.rotation.astype(dtype), self.translation.astype(dtype))

    def __getitem__(self, idx) -> "RigidTransform":
        return RigidTransform(self.rotation[idx], self.translation[idx])


def apply(T: RigidTransform, x: np.ndarray) -> np.ndarray:
    """R x + t."""
    return np.einsum("...ij,...j->...i", T.rotation, x) + T.translation


def apply_inverse(T: RigidTransform, x: np.ndarray) -> np.ndarray:
    """R^T (x - t)."""
    return np.einsum("...ji,...j->...i", T.rotation, x - T.translation)


def compose(T1: RigidTransform, T2: RigidTransform) -> RigidTransform:
    """The transform acting as T1 after T2."""
    rot = np.einsum("...ij,...jk->...ik", T1.rotation, T2.rotation)
    return RigidTransform(rot, apply(T1, T2.translation))


def inverse(T: RigidTransform) -> RigidTransform:
    rot_t = np.swapaxes(T.rotation, -1, -2)
    return RigidTransform(rot_t, -np.einsum("...ij,...j->...i", rot_t, T.translation))


def is_rigid(T: RigidTransform, atol: float = 1e-9) -> bool:
    R = T.rotation
    gram = np.einsum("...ki,...kj->...ij", R, R)
    return bool(np.allclose(gram, np.eye(3), atol=atol, rtol=0)
                and np.allclose(np.linalg.det(R), 1.0, atol=atol, rtol=0))


def frame_from_three_points(p_a, origin, p_b) -> RigidTransform:
    """Gram-Schmidt frame centred on ``origin``.

    The first axis points from ``origin`` to ``p_b``; the second is the
    component of ``p_a - origin`` orthogonal to it; the third completes a
    right-handed basis. For protein backbones pass (N, CA, C), which puts the
    first axis along CA->C; RNA frames use (C3', C4', O4') the same way.
    """
    p_a, origin, p_b = np.broadcast_arrays(*(np.asarray(p, dtype=float) for p in (p_a, origin, p_b)))
    v1 = p_b - origin
    v2 = p_a - origin
    n1 = np.linalg.norm(v1, axis=-1, keepdims=True)
    n2 = np.linalg.norm(v2, axis=-1, keepdims=True)
    if np.any(n1 <= DEGENERACY_EPS) or np.any(n2 <= DEGENERACY_EPS):
        raise SingularFrameError("coincident points: bond vector shorter than 1e-8")
    e1 = v1 / n1
    u2 = v2 - np.sum(v2 * e1, axis=-1, keepdims=True) * e1
    nu2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(nu2 <= DEGENERACY_EPS * n2):
        raise SingularFrameError("bond vectors are parallel")
    e2 = u2 / nu2
    e3 = np.cross(e1, e2)
    return RigidTransform(np.stack([e1, e2, e3], axis=-1), origin.copy())


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def random_rototranslation(rng: Rng, translation_scale: float = 1.0) -> RigidTransform:
    """Haar-uniform rotation (normalised Gaussian quaternion) and Gaussian shift."""
    if translation_scale < 0:
        raise ValueError("translation_scale must be non-negative")
    q = rng.normal(4)
    while np.linalg.norm(q) < 1e-12:
        q = rng.normal(4)
    t = translation_scale * rng.normal(3)
    return RigidTransform(quaternion_to_rotation(q), t)


def torsion_angle(p1, p2, p3, p4) -> np.ndarray | float:
    """Signed (IUPAC) dihedral in (-pi, pi]; 0 for cis, pi for trans."""
    p1, p2, p3, p4 = (np.asarray(p, dtype=float) for p in (p1, p2, p3, p4))
    b1 = p2 - p1
    b2 = p3 - p2
    b3 = p4 - p3
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    lb2 = np.linalg.norm(b2, axis=-1)
    scale1 = np.linalg.norm(b1, axis=-1) * lb2
    scale2 = lb2 * np.linalg.norm(b3, axis=-1)
    if (np.any(lb2 <= DEGENERACY_EPS)
            or np.any(np.linalg.norm(n1, axis=-1) <= DEGENERACY_EPS * scale1)
            or np.any(np.linalg.norm(n2, axis=-1) <= DEGENERACY_EPS * scale2)):
        raise UndefinedDihedralError("three consecutive points are collinear")
    x = np.sum(n1 * n2, axis=-1)
    y = lb2 * np.sum(b1 * n2, axis=-1)
    angle = np.arctan2(y, x)
    angle = np.where(angle <= -math.pi, math.pi, angle)
    return float(angle) if angle.ndim == 0 else angle


@dataclass(frozen=True)
class FrameSet:
    """Per-residue frames plus a validity mask."""

    transforms: RigidTransform
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mask is None:
            object.__setattr__(self, "mask", np.ones(len(self), dtype=bool))

    @classmethod
    def from_backbone(cls, n, ca, c, mask=None) -> "FrameSet":
        return cls(frame_from_three_points(n, ca, c), mask)

    @classmethod
    def identity(cls, length: int, dtype=np.float64) -> "FrameSet":
        return cls(RigidTransform.identity((length,), dtype))

    def __len__(self) -> int:
        return self.transforms.translation.shape[0]

    @property
    def rotations(self) -> np.ndarray:
        return self.transforms.rotation

    @property
    def translations(self) -> np.ndarray:
        return self.transforms.translation

    def astype(self, dtype) -> "FrameSet":
        return FrameSet(self.transforms.astype(dtype), self.mask)

    def left_multiply(self, g: RigidTransform) -> "FrameSet":
        """Frames moved by one global rigid motion: compose(g, T_i)."""
        return FrameSet(compose(g, self.transforms), self.mask)

    def apply_points(self, x: np.ndarray) -> np.ndarray:
        """Map local points of shape (..., L, P, 3) to global coordinates."""
        R = self.rotations.astype(x.dtype, copy=False)
        t = self.translations.astype(x.dtype, copy=False)
        return np.einsum("lij,...lpj->...lpi", R, x) + t[:, None, :]

    def apply_inverse_points(self, x: np.ndarray) -> np.ndarray:
        """Map global points of shape (..., L, P, 3) into each residue's frame."""
        R = self.rotations.astype(x.dtype, copy=False)
        t = self.translations.astype(x.dtype, copy=False)
        return np.einsum("lji,...lpj->...lpi", R, x - t[:, None, :])
