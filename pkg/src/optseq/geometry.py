"""Quaternion helpers and the :class:`Pose` value type.

Quaternions are stored scalar-first, ``(w, x, y, z)``. Every helper accepts a
single quaternion of shape ``(4,)`` or a batch of shape ``(N, 4)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from optseq.errors import ContractError

UNIT_TOL = 1e-6

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_multiply(q1: np.ndarray, q0: np.ndarray) -> np.ndarray:
    """Hamilton product ``q1 * q0`` (apply ``q0`` first, then ``q1``)."""
    w1, x1, y1, z1 = np.moveaxis(np.asarray(q1, dtype=float), -1, 0)
    w0, x0, y0, z0 = np.moveaxis(np.asarray(q0, dtype=float), -1, 0)
    return np.stack(
        [
            w1 * w0 - x1 * x0 - y1 * y0 - z1 * z0,
            w1 * x0 + x1 * w0 + y1 * z0 - z1 * y0,
            w1 * y0 - x1 * z0 + y1 * w0 + z1 * x0,
            w1 * z0 + x1 * y0 - y1 * x0 + z1 * w0,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_from_axis_angle(rotvec: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle, radians) to a unit quaternion."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(half)/angle -> 0.5 as angle -> 0
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(angle > 1e-12, np.sin(half) / angle, 0.5)
    return np.concatenate([np.cos(half), rotvec * scale], axis=-1)


def quat_from_yaw(yaw: np.ndarray | float) -> np.ndarray:
    yaw = np.asarray(yaw, dtype=float)
    zeros = np.zeros_like(yaw)
    return np.stack([np.cos(yaw / 2), zeros, zeros, np.sin(yaw / 2)], axis=-1)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def check_unit(q: np.ndarray, name: str = "quaternion") -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise ContractError(f"{name} must have 4 components, got shape {q.shape}")
    norm = np.linalg.norm(q, axis=-1)
    if not np.all(np.isfinite(norm)) or np.any(np.abs(norm - 1.0) > UNIT_TOL):
        raise ContractError(f"{name} is not a unit quaternion (norm {norm})")
    return q


@dataclass(frozen=True, eq=False)
class Pose:
    """Position in meters plus a unit orientation quaternion ``(w, x, y, z)``.

    Quaternions within ``1e-6`` of unit norm are renormalized on construction;
    anything further off is rejected.
    """

    position: np.ndarray
    orientation: np.ndarray = IDENTITY_QUAT

    def __post_init__(self) -> None:
        pos = np.array(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ContractError(f"pose position must be finite, got {pos}")
        quat = check_unit(np.array(self.orientation, dtype=float).reshape(4), "orientation")
        quat = quat / np.linalg.norm(quat)
        pos.setflags(write=False)
        quat.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", quat)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.position, other.position)
            and np.array_equal(self.orientation, other.orientation)
        )

    def __hash__(self) -> int:
        return hash((self.position.tobytes(), self.orientation.tobytes()))

    def __repr__(self) -> str:
        p = ", ".join(f"{v:.4f}" for v in self.position)
        q = ", ".join(f"{v:.4f}" for v in self.orientation)
        return f"Pose(position=[{p}], orientation=[{q}])"

    def as_array(self) -> np.ndarray:
        """``[px, py, pz, qw, qx, qy, qz]``."""
        return np.concatenate([self.position, self.orientation])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Pose":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:3], arr[3:7])
