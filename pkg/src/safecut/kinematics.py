"""Forward kinematics of the 3-DOF cutting arm.

Joint vector q = (d1, theta2, theta3): prismatic insertion along the base
z-axis, a bending joint about the base y-axis, and a distal bending joint
about the rotated x-axis.  The carried base link l1 and the two bending
links l2, l_end extend along the successive local z-axes, so at zero
bending the tip sits at (0, 0, d1 + l1 + l2 + l_end).

Lengths in mm, angles in rad.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SingularJacobianError(RuntimeError):
    """Raised when an undamped pseudo-inverse hits a rank-deficient Jacobian."""


@dataclass
class KinematicParams:
    """Link lengths [mm] and outer diameter [mm] of the instrument."""

    l1: float = 3.0
    l2: float = 10.0
    l_end: float = 17.0
    outer_diameter: float = 3.7

    def __post_init__(self):
        if min(self.l1, self.l2, self.l_end) <= 0.0:
            raise ValueError("link lengths must be positive")


@dataclass
class JointConfig:
    """One joint configuration: insertion d1 [mm], bending angles [rad]."""

    d1: float
    theta2: float
    theta3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d1, self.theta2, self.theta3])

    @staticmethod
    def from_array(q) -> "JointConfig":
        return JointConfig(float(q[0]), float(q[1]), float(q[2]))


@dataclass
class JointLimits:
    """Workspace box used by scenario validation, not enforced by the plant."""

    d1_max: float = 50.0
    angle_max: float = math.pi / 2

    def contains(self, q: JointConfig) -> bool:
        return (
            0.0 <= q.d1 <= self.d1_max
            and abs(q.theta2) <= self.angle_max
            and abs(q.theta3) <= self.angle_max
        )


def forward_kinematics(q: JointConfig, params: KinematicParams) -> np.ndarray:
    """Tip position [mm] in the base frame."""
    c2, s2 = math.cos(q.theta2), math.sin(q.theta2)
    c3, s3 = math.cos(q.theta3), math.sin(q.theta3)
    a = params.l2 + params.l_end * c3
    return np.array([
        s2 * a,
        -params.l_end * s3,
        q.d1 + params.l1 + c2 * a,
    ])


def jacobian(q: JointConfig, params: KinematicParams) -> np.ndarray:
    """3x3 tip Jacobian d(position)/d(q).

    Column 1 is the prismatic axis (0, 0, 1) for every q.
    """
    c2, s2 = math.cos(q.theta2), math.sin(q.theta2)
    c3, s3 = math.cos(q.theta3), math.sin(q.theta3)
    le = params.l_end
    a = params.l2 + le * c3
    return np.array([
        [0.0, c2 * a, -s2 * le * s3],
        [0.0, 0.0, -le * c3],
        [1.0, -s2 * a, -c2 * le * s3],
    ])


def damped_pseudo_inverse(J: np.ndarray, damping: float = 1e-3) -> np.ndarray:
    """J^T (J J^T + damping^2 I)^-1, the damped least-squares inverse.

    damping = 0 reduces to the exact inverse for full-rank J; in that case a
    numerically singular J (condition number above 1e12) raises
    SingularJacobianError instead of returning garbage.
    """
    JJt = J @ J.T
    if damping == 0.0:
        if np.linalg.cond(JJt) > 1e12:
            raise SingularJacobianError("Jacobian is numerically singular and damping is zero")
        return J.T @ np.linalg.inv(JJt)
    reg = JJt + (damping * damping) * np.eye(3)
    return J.T @ np.linalg.inv(reg)
