"""Model-free velocity tracking and disturbance shaping.

The control law needs only the Jacobian: u = -k_d * edot with
edot = Jpinv(q) (xdot - xdot_safe).  No inertial quantity appears here, which
is what makes the tracking loop model-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import JointConfig, KinematicParams, damped_pseudo_inverse, jacobian


class InsufficientTransientError(RuntimeError):
    """Decay-rate fit requested on a log without a usable transient."""


@dataclass
class ControllerParams:
    """k_d maps velocity error to joint force/torque; damping regularizes Jpinv.

    The default gain is tuned so the measured closed-loop decay rate stays a
    few times above the largest filter alpha in the scenario catalog while
    the stiffest joint remains stable under RK4 at dt = 1e-3 s.
    """

    k_d: float = 8000.0
    damping: float = 1e-3

    def __post_init__(self):
        if self.k_d <= 0.0:
            raise ValueError("k_d must be positive")
        if self.damping < 0.0:
            raise ValueError("damping must be non-negative")


@dataclass
class DisturbanceSpec:
    """Additive joint-space disturbance d(t) with ||d||_inf <= amplitude.

    waveform: "none", "constant", or "sinusoid" (per-joint phases drawn
    deterministically from seed).
    """

    waveform: str = "none"
    amplitude: tuple = (0.0, 0.0, 0.0)
    frequency: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.waveform not in ("none", "constant", "sinusoid"):
            raise ValueError(f"unknown waveform {self.waveform!r}")
        if self.waveform == "sinusoid" and self.frequency <= 0.0:
            raise ValueError("sinusoid waveform needs a positive frequency")

    def phases(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.uniform(0.0, 2.0 * math.pi, 3)

    def bound(self) -> float:
        return float(np.max(np.abs(self.amplitude)))


def velocity_error(q: JointConfig, qdot: np.ndarray, xdot_safe: np.ndarray,
                   params: ControllerParams, kin: KinematicParams) -> np.ndarray:
    """Joint-space velocity error edot = Jpinv (J qdot - xdot_safe)."""
    J = jacobian(q, kin)
    xdot = J @ np.asarray(qdot, dtype=float)
    return damped_pseudo_inverse(J, params.damping) @ (xdot - np.asarray(xdot_safe, dtype=float))


def control_law(edot: np.ndarray, params: ControllerParams) -> np.ndarray:
    """u = -k_d * edot."""
    return -params.k_d * np.asarray(edot, dtype=float)


def disturbance(t: float, spec: DisturbanceSpec) -> np.ndarray:
    """Disturbance sample at time t [s]."""
    amp = np.asarray(spec.amplitude, dtype=float)
    if spec.waveform == "none":
        return np.zeros(3)
    if spec.waveform == "constant":
        return amp.copy()
    return amp * np.sin(2.0 * math.pi * spec.frequency * t + spec.phases())


def measure_decay_rate(t: np.ndarray, edot: np.ndarray, floor: float = 1e-12) -> float:
    """Least-squares slope of -log||edot|| over the initial transient.

    The window runs from the peak of ||edot|| until the norm first drops
    below 1% of that peak (or the end of the log).  Raises
    InsufficientTransientError when the peak never exceeds floor or the
    window is too short to fit a slope.
    """
    t = np.asarray(t, dtype=float)
    norms = np.linalg.norm(np.asarray(edot, dtype=float), axis=1)
    if norms.size == 0 or float(norms.max()) <= floor:
        raise InsufficientTransientError("no transient above the noise floor")
    start = int(norms.argmax())
    peak = norms[start]
    below = np.nonzero(norms[start:] < 0.01 * peak)[0]
    stop = start + int(below[0]) + 1 if below.size else norms.size
    window = slice(start, stop)
    tw, nw = t[window], norms[window]
    keep = nw > floor
    if keep.sum() < 3:
        raise InsufficientTransientError("transient window too short for a fit")
    slope, _ = np.polyfit(tw[keep], np.log(nw[keep]), 1)
    return float(-slope)
