"""Rigid-body dynamics of the cutting arm: M(q) qdd + C(q, qd) qd + g(q) = u.

The three moving links are modelled as point masses at their distal ends
(carried base, bending link l2, tip link l_end), plus small constant rotor
inertias on the two bending joints.  That keeps the mass matrix symmetric
positive definite over the workspace while M[0][0] stays equal to the total
moved mass.  The input map is the identity: one generalized force per joint.

Masses in g, lengths in mm, so forces are g*mm/s^2 and torques g*mm^2/s^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import JointConfig, KinematicParams, forward_kinematics


class SingularMassError(RuntimeError):
    """Raised if the mass matrix cannot be inverted (invalid parameters)."""


@dataclass
class DynamicParams:
    """Inertial parameters of the arm.

    masses: point masses [g] of carried base, link l2, link l_end.
    link_inertias: rotor inertia [g*mm^2] per link about its bending axis;
        the first entry belongs to the prismatic link and never enters the
        equations of motion.
    gravity: acceleration vector [mm/s^2] acting on every mass.
    """

    masses: tuple = (2.0, 1.5, 1.0)
    link_inertias: tuple = (0.0, 2.0, 1.0)
    gravity: tuple = (0.0, 0.0, -9810.0)
    kinematics: KinematicParams = field(default_factory=KinematicParams)

    def __post_init__(self):
        if min(self.masses) <= 0.0:
            raise ValueError("masses must be positive")
        if min(self.link_inertias) < 0.0:
            raise ValueError("link inertias must be non-negative")


@dataclass
class RobotState:
    q: JointConfig
    qdot: np.ndarray


def mass_matrix(q: JointConfig, params: DynamicParams) -> np.ndarray:
    """Symmetric positive definite joint-space mass matrix."""
    m1, m2, m3 = params.masses
    _, i2, i3 = params.link_inertias
    kp = params.kinematics
    c2, s2 = math.cos(q.theta2), math.sin(q.theta2)
    c3, s3 = math.cos(q.theta3), math.sin(q.theta3)
    le = kp.l_end
    a = kp.l2 + le * c3
    m01 = -s2 * (m2 * kp.l2 + m3 * a)
    m02 = -m3 * c2 * le * s3
    return np.array([
        [m1 + m2 + m3, m01, m02],
        [m01, m2 * kp.l2 ** 2 + m3 * a * a + i2, 0.0],
        [m02, 0.0, m3 * le * le + i3],
    ])


def _christoffel_terms(q: JointConfig, params: DynamicParams):
    # Nonzero partial derivatives of M wrt theta2 / theta3; everything else
    # in dM/dq vanishes for this chain.
    _, m2, m3 = params.masses
    kp = params.kinematics
    c2, s2 = math.cos(q.theta2), math.sin(q.theta2)
    c3, s3 = math.cos(q.theta3), math.sin(q.theta3)
    le = kp.l_end
    a = kp.l2 + le * c3
    a2 = -c2 * (m2 * kp.l2 + m3 * a)   # dM01/dtheta2
    b2 = m3 * s2 * le * s3             # dM02/dtheta2
    a3 = s2 * m3 * le * s3             # dM01/dtheta3
    b3 = -m3 * c2 * le * c3            # dM02/dtheta3
    d3 = -2.0 * m3 * a * le * s3       # dM11/dtheta3
    return a2, b2, a3, b3, d3


def coriolis_matrix(q: JointConfig, qdot: np.ndarray, params: DynamicParams) -> np.ndarray:
    """Coriolis/centrifugal matrix from Christoffel symbols of M(q).

    Built so that dM/dt - 2 C is skew-symmetric.
    """
    a2, b2, a3, b3, d3 = _christoffel_terms(q, params)
    dq1, dq2, dq3 = float(qdot[0]), float(qdot[1]), float(qdot[2])
    half_pm = 0.5 * (a3 + b2)
    half_mm = 0.5 * (a3 - b2)
    return np.array([
        [0.0, a2 * dq2 + half_pm * dq3, half_pm * dq2 + b3 * dq3],
        [half_mm * dq3, 0.5 * d3 * dq3, half_mm * dq1 + 0.5 * d3 * dq2],
        [-half_mm * dq2, -half_mm * dq1 - 0.5 * d3 * dq2, 0.0],
    ])


def gravity_vector(q: JointConfig, params: DynamicParams) -> np.ndarray:
    """Generalized gravity load dU/dq for U the potential energy of the masses."""
    m1, m2, m3 = params.masses
    kp = params.kinematics
    gx, gy, gz = params.gravity
    c2, s2 = math.cos(q.theta2), math.sin(q.theta2)
    c3, s3 = math.cos(q.theta3), math.sin(q.theta3)
    le = kp.l_end
    a = kp.l2 + le * c3
    return np.array([
        -(m1 + m2 + m3) * gz,
        -(m2 * kp.l2 + m3 * a) * (gx * c2 - gz * s2),
        m3 * le * (gx * s2 * s3 + gy * c3 + gz * c2 * s3),
    ])


def kinetic_energy(state: RobotState, params: DynamicParams) -> float:
    qd = np.asarray(state.qdot, dtype=float)
    return 0.5 * float(qd @ mass_matrix(state.q, params) @ qd)


def potential_energy(state: RobotState, params: DynamicParams) -> float:
    m1, m2, m3 = params.masses
    kp = params.kinematics
    g = np.array(params.gravity)
    q = state.q
    c2, s2 = math.cos(q.theta2), math.sin(q.theta2)
    base = np.array([0.0, 0.0, q.d1 + kp.l1])
    p2 = base + np.array([s2 * kp.l2, 0.0, c2 * kp.l2])
    p3 = forward_kinematics(q, kp)
    return -float(m1 * g @ base + m2 * g @ p2 + m3 * g @ p3)


def _accel(q: JointConfig, qdot: np.ndarray, u: np.ndarray, params: DynamicParams) -> np.ndarray:
    a2, b2, a3, b3, d3 = _christoffel_terms(q, params)
    dq1, dq2, dq3 = float(qdot[0]), float(qdot[1]), float(qdot[2])
    cvec = np.array([
        a2 * dq2 * dq2 + (a3 + b2) * dq2 * dq3 + b3 * dq3 * dq3,
        (a3 - b2) * dq1 * dq3 + d3 * dq2 * dq3,
        (b2 - a3) * dq1 * dq2 - 0.5 * d3 * dq2 * dq2,
    ])
    rhs = u - cvec - gravity_vector(q, params)
    try:
        return np.linalg.solve(mass_matrix(q, params), rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMassError(f"mass matrix singular at q={q}") from exc


def forward_dynamics(state: RobotState, u: np.ndarray, params: DynamicParams) -> np.ndarray:
    """Joint accelerations for forces/torques u (identity input map)."""
    return _accel(state.q, np.asarray(state.qdot, dtype=float), np.asarray(u, dtype=float), params)


def rk4_step(state: RobotState, u: np.ndarray, dt: float, params: DynamicParams) -> RobotState:
    """One classical Runge-Kutta step with u held constant over the interval."""
    u = np.asarray(u, dtype=float)
    q = state.q.as_array()
    qd = np.asarray(state.qdot, dtype=float)

    k1q = qd
    k1v = _accel(JointConfig.from_array(q), qd, u, params)
    q2 = q + 0.5 * dt * k1q
    v2 = qd + 0.5 * dt * k1v
    k2v = _accel(JointConfig.from_array(q2), v2, u, params)
    q3 = q + 0.5 * dt * v2
    v3 = qd + 0.5 * dt * k2v
    k3v = _accel(JointConfig.from_array(q3), v3, u, params)
    q4 = q + dt * v3
    v4 = qd + dt * k3v
    k4v = _accel(JointConfig.from_array(q4), v4, u, params)

    q_new = q + (dt / 6.0) * (k1q + 2.0 * v2 + 2.0 * v3 + v4)
    qd_new = qd + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return RobotState(JointConfig.from_array(q_new), qd_new)
