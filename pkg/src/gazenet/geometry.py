"""Gaze-angle geometry: angle/vector conversions, the axis-angle (Rodrigues)
rotation map used for head-pose labels, mirror/averaging helpers, and the
clamped angular-error metric.

Angles everywhere are (yaw, pitch) in radians.  The camera looks along +z, so
a subject looking straight into the camera has gaze vector (0, 0, -1).  All
functions broadcast: angle arguments may be single (yaw, pitch) pairs or
arrays whose last axis is 2, vectors have last axis 3.
"""

from __future__ import annotations

import numpy as np

GIMBAL_EPS = 1e-12
UNIT_NORM_TOL = 1e-6


def rodrigues(rotvec) -> np.ndarray:
    """Axis-angle rotation vector -> 3x3 rotation matrix.

    R = I + sin(t)*K + (1 - cos(t))*K^2 with t = |r| and K the cross-product
    matrix of the unit axis.  Near-zero rotations return the exact identity.
    """
    r = np.asarray(rotvec, dtype=np.float64)
    theta = float(np.linalg.norm(r))
    if theta < GIMBAL_EPS:
        return np.eye(3)
    kx, ky, kz = r / theta
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def angles_to_vector(angles) -> np.ndarray:
    """(yaw, pitch) radians -> unit gaze direction (x, y, z)."""
    a = np.asarray(angles, dtype=np.float64)
    yaw, pitch = a[..., 0], a[..., 1]
    cp = np.cos(pitch)
    return np.stack([-cp * np.sin(yaw), -np.sin(pitch), -cp * np.cos(yaw)], axis=-1)


def vector_to_angles(vec) -> np.ndarray:
    """Unit direction -> (yaw, pitch); inverse of `angles_to_vector`.

    Rejects inputs whose norm is off unity by more than 1e-6.  At the gimbal
    poles (|pitch| = pi/2) yaw is defined as 0 so degenerate labels stay
    usable.
    """
    v = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norm - 1.0) > UNIT_NORM_TOL):
        worst = float(np.max(np.abs(norm - 1.0)))
        raise ValueError(f"vector_to_angles expects unit vectors (norm off by {worst:.3g})")
    pitch = np.arcsin(np.clip(-v[..., 1], -1.0, 1.0))
    yaw = np.arctan2(-v[..., 0], -v[..., 2])
    yaw = np.where(np.cos(pitch) < GIMBAL_EPS, 0.0, yaw)
    return np.stack([yaw, pitch], axis=-1)


def arc_degrees_between(va, vb) -> np.ndarray:
    """Arc angle between direction vectors in degrees, clamped so rounding
    can never push the dot product outside arccos' domain (no NaNs)."""
    a = np.asarray(va, dtype=np.float64)
    b = np.asarray(vb, dtype=np.float64)
    dot = np.sum(a * b, axis=-1)
    return np.degrees(np.arccos(np.clip(dot, -1.0, 1.0)))


def angular_error(angles_a, angles_b) -> np.ndarray:
    """3-D arc angle between two gaze directions, in degrees."""
    return arc_degrees_between(angles_to_vector(angles_a), angles_to_vector(angles_b))


def angle_euclidean(angles_a, angles_b) -> np.ndarray:
    """Euclidean distance between (yaw, pitch) pairs, reported in degrees."""
    a = np.asarray(angles_a, dtype=np.float64)
    b = np.asarray(angles_b, dtype=np.float64)
    d = np.degrees(a - b)
    return np.sqrt(np.sum(d * d, axis=-1))


def flip_gaze(angles) -> np.ndarray:
    """Mirror a gaze about the vertical axis: (yaw, pitch) -> (-yaw, pitch).

    The companion of horizontally mirroring the eye image.
    """
    a = np.asarray(angles, dtype=np.float64)
    out = a.copy()
    out[..., 0] = -out[..., 0]
    return out


def average_pair(left, right) -> np.ndarray:
    """Componentwise mean of two (yaw, pitch) labels."""
    return (np.asarray(left, dtype=np.float64) + np.asarray(right, dtype=np.float64)) / 2.0


def headpose_from_rotvec(rotvec) -> np.ndarray:
    """Head-pose (yaw, pitch) from an axis-angle rotation vector.

    Takes the rotated z-axis Z = R[:, 2]; pitch = arcsin(Z_y),
    yaw = atan2(Z_x, Z_z).
    """
    z = rodrigues(rotvec)[:, 2]
    pitch = float(np.arcsin(np.clip(z[1], -1.0, 1.0)))
    yaw = 0.0 if np.cos(pitch) < GIMBAL_EPS else float(np.arctan2(z[0], z[2]))
    return np.array([yaw, pitch])
