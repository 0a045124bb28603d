"""Axis-angle rotations: exponential map, its left Jacobian, and the log map."""

import numpy as np

SMALL_ANGLE = 1e-6


def skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def rodrigues(theta):
    """Rotation matrix for the axis-angle vector ``theta`` (radians)."""
    theta = np.asarray(theta, dtype=float)
    a = np.linalg.norm(theta)
    K = skew(theta)
    if a < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + (np.sin(a) / a) * K + ((1.0 - np.cos(a)) / (a * a)) * K @ K


def left_jacobian(theta):
    """Left Jacobian of SO(3): dR/dtheta_c = skew(Jl @ e_c) @ R."""
    theta = np.asarray(theta, dtype=float)
    a = np.linalg.norm(theta)
    K = skew(theta)
    if a < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    a2 = a * a
    return np.eye(3) + ((1.0 - np.cos(a)) / a2) * K + ((a - np.sin(a)) / (a2 * a)) * K @ K


def rotation_log(R):
    """Axis-angle vector of a rotation matrix, angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    a = np.arccos(c)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if a < SMALL_ANGLE:
        return 0.5 * w
    if np.pi - a < 1e-6:
        # near pi the antisymmetric part vanishes; read the axis off R + I
        B = (R + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        return a * axis
    return (a / (2.0 * np.sin(a))) * w


def axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    return axis / np.linalg.norm(axis) * angle
