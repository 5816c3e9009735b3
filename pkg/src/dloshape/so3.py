"""Rotation helpers: skew map, exponential and logarithm on SO(3), rigid poses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that ``hat(a) @ b == cross(a, b)``."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(W: np.ndarray) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula. Series expansion near the identity."""
    w = np.asarray(w, dtype=float)
    th2 = float(w @ w)
    th = np.sqrt(th2)
    if th < 1e-8:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = np.sin(th) / th
        s = np.sin(0.5 * th) / th
        b = 2.0 * s * s
    W = hat(w)
    return np.eye(3) + a * W + b * (W @ W)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R`` (angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    c = 0.5 * (np.trace(R) - 1.0)
    skew = 0.5 * vee(R - R.T)
    # atan2 keeps full precision at both ends, where arccos loses half the digits
    th = float(np.arctan2(np.linalg.norm(skew), c))
    if th < 1e-6:
        # sin(th)/th ~ 1 - th^2/6
        return skew * (1.0 + th * th / 6.0)
    if np.pi - th < 1e-4:
        # near pi the antisymmetric part vanishes; the symmetric part is
        # c I + (1 - c) a a^T, so the axis comes from its dominant column
        B = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.linalg.norm(B[:, k])
        if axis @ skew < 0.0:
            axis = -axis
        return th * axis
    return skew * (th / np.sin(th))


def orthonormality_error(R: np.ndarray) -> float:
    return float(np.linalg.norm(R.T @ R - np.eye(3)))


def is_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R)
    return R.shape == (3, 3) and orthonormality_error(R) < tol and np.linalg.det(R) > 0.0


@dataclass(frozen=True)
class Pose:
    """Position (m) and orientation of a gripper or rod cross-section."""

    p: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(3)
        R = np.array(self.R, dtype=float).reshape(3, 3)
        if not (np.all(np.isfinite(p)) and is_rotation(R)):
            raise ValueError("pose needs a finite position and a proper rotation matrix")
        p.flags.writeable = False
        R.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "R", R)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.p, other.p) and np.array_equal(self.R, other.R)

    __hash__ = None

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.eye(3))

    def error_to(self, other: "Pose") -> tuple[np.ndarray, np.ndarray]:
        """Translation and rotation-vector error of ``self`` relative to ``other``."""
        return self.p - other.p, log_so3(other.R.T @ self.R)
