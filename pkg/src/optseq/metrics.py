"""Pose metrics: quaternion orientation difference and combined pose distance.

Both functions broadcast over leading batch dimensions.
"""
from __future__ import annotations

import numpy as np

from optseq.errors import ContractError
from optseq.geometry import Pose, check_unit

DEFAULT_OMEGA_R = 1.0
# |q . q| of a normalized quaternion can round to 1 - 1ulp; treat that as equal.
_DOT_SNAP = 1.0 - 4 * np.finfo(float).eps


def _rho(dot: np.ndarray, omega_r: float) -> np.ndarray:
    return omega_r * (1.0 - np.where(dot >= _DOT_SNAP, 1.0, dot))


def _check_omega(omega_r: float) -> float:
    omega_r = float(omega_r)
    if not (omega_r > 0 and np.isfinite(omega_r)):
        raise ContractError(f"omega_r must be positive and finite, got {omega_r}")
    return omega_r


def orientation_difference(q1, q2, omega_r: float = DEFAULT_OMEGA_R):
    """``omega_r * (1 - |q1 . q2|)``: 0 for equal orientations, ``omega_r`` at 180 degrees.

    Sign-invariant, so ``q`` and ``-q`` compare as identical.
    """
    omega_r = _check_omega(omega_r)
    q1 = check_unit(q1, "q1")
    q2 = check_unit(q2, "q2")
    dot = np.abs(np.sum(q1 * q2, axis=-1))
    rho = _rho(dot, omega_r)
    return float(rho) if np.ndim(rho) == 0 else rho


def pose_distance(a: Pose, b: Pose, omega_r: float = DEFAULT_OMEGA_R) -> float:
    """Euclidean position distance plus :func:`orientation_difference`."""
    return float(
        np.linalg.norm(b.position - a.position)
        + orientation_difference(a.orientation, b.orientation, omega_r)
    )


def pose_distance_arrays(pos_a, quat_a, pos_b, quat_b, omega_r: float = DEFAULT_OMEGA_R) -> np.ndarray:
    """Vectorized :func:`pose_distance` over broadcastable position/quaternion arrays.

    Inputs are assumed unit-norm (they come from validated poses or the
    environment's normalized state), so no per-call check is done here.
    """
    pos_a, pos_b = np.asarray(pos_a, dtype=float), np.asarray(pos_b, dtype=float)
    quat_a, quat_b = np.asarray(quat_a, dtype=float), np.asarray(quat_b, dtype=float)
    dot = np.abs(np.sum(quat_a * quat_b, axis=-1))
    return np.linalg.norm(pos_b - pos_a, axis=-1) + _rho(dot, omega_r)
