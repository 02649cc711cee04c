"""Closed-loop simulation: reference -> desired velocity -> filter -> plant.

Each control step is strictly causal.  At step k the loop reads the reference
sample, forms the desired tip velocity, assembles the barrier rows at the
current tip position, filters the velocity, runs the model-free controller,
adds the (unlogged) disturbance to the applied input, and integrates the
plant one RK4 interval.  Everything observable is appended to the log before
the state advances, so two runs of the same scenario produce bit-identical
logs.

The log also round-trips through a versioned CSV schema, and three plain
data files per scenario mirror the figures a run is meant to reproduce:
the 3-D path with markings and boundaries, barrier values over time, and
the velocity triplet (desired, safe, actual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import control as ctl
from . import safety
from .dynamics import RobotState, rk4_step
from .kinematics import JointConfig, forward_kinematics, jacobian
from .safety import EmptyLogError
from .scenario import ReferenceTrajectory, ScenarioSpec

_CSV_VERSION = "# safecut-log v1"


@dataclass
class TrajectoryLog:
    """Per-step record arrays of one run.

    h has one column per barrier, ordered tumors first then shells, named in
    barrier_names.  d is the disturbance that was added to the applied input;
    u is the controller output before that addition.
    """

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    x: np.ndarray
    xdot: np.ndarray
    xdot_des: np.ndarray
    xdot_safe: np.ndarray
    u: np.ndarray
    d: np.ndarray
    edot: np.ndarray
    h: np.ndarray
    active_rows: np.ndarray
    gate: np.ndarray
    barrier_names: list

    def __len__(self):
        return len(self.t)


@dataclass
class SafetyReport:
    """Headline numbers of a run."""

    min_h: dict
    first_violation_time: Optional[float]
    max_tracking_error: float
    decay_rate: float
    path_completion: float
    deviation_integral: float


def desired_velocity(x: np.ndarray, t: float, ref: ReferenceTrajectory,
                     kp_gain: float) -> np.ndarray:
    """Feedforward plus proportional pull toward the reference sample."""
    p_ref, v_ref = ref.sample(t)
    return v_ref + kp_gain * (p_ref - x)


def _barrier_names(spec: ScenarioSpec) -> list:
    return [f"tumor{i}" for i in range(len(spec.tumors))] + \
           [f"shell{j}" for j in range(len(spec.shells))]


def _all_barrier_values(x: np.ndarray, spec: ScenarioSpec) -> np.ndarray:
    vals = [safety.barrier_value(x, t) for t in spec.tumors]
    vals += [safety.depth_barrier_value(x, s) for s in spec.shells]
    return np.array(vals)


def run(spec: ScenarioSpec) -> TrajectoryLog:
    """Simulate the scenario over its full duration at fixed dt."""
    ref = spec.reference()
    duration = spec.run_duration()
    dt = spec.dt
    n = int(round(duration / dt)) + 1
    safe_set = spec.safe_set()
    fp = spec.filter
    cp = spec.controller
    names = _barrier_names(spec)
    nb = len(names)

    log = TrajectoryLog(
        t=np.zeros(n), q=np.zeros((n, 3)), qdot=np.zeros((n, 3)),
        x=np.zeros((n, 3)), xdot=np.zeros((n, 3)), xdot_des=np.zeros((n, 3)),
        xdot_safe=np.zeros((n, 3)), u=np.zeros((n, 3)), d=np.zeros((n, 3)),
        edot=np.zeros((n, 3)), h=np.zeros((n, nb)),
        active_rows=np.zeros(n, dtype=np.int64), gate=np.zeros(n, dtype=bool),
        barrier_names=names,
    )

    state = RobotState(
        JointConfig(spec.initial.q.d1, spec.initial.q.theta2, spec.initial.q.theta3),
        np.asarray(spec.initial.qdot, dtype=float).copy(),
    )
    gate_engaged = not (fp.enabled and fp.activation_gate)
    quiet = spec.disturbance.waveform == "none"

    for k in range(n):
        t = k * dt
        q = state.q
        x = forward_kinematics(q, spec.kinematics)
        J = jacobian(q, spec.kinematics)
        xdot = J @ state.qdot
        v_d = desired_velocity(x, t, ref, spec.kp_gain)

        rows = []
        if fp.enabled:
            selected = safety.selected_barrier_values(x, safe_set, fp)
            if not gate_engaged and all(h >= 0.0 for _, _, h, _ in selected):
                gate_engaged = True
            if gate_engaged:
                rows = [safety.HalfspaceConstraint(normal, -fp.alpha * h)
                        for _, _, h, normal in selected]
        v_s = safety.safety_filter(v_d, rows) if rows else v_d.copy()

        edot = ctl.velocity_error(q, state.qdot, v_s, cp, spec.kinematics)
        u = ctl.control_law(edot, cp)
        d = np.zeros(3) if quiet else ctl.disturbance(t, spec.disturbance)

        log.t[k] = t
        log.q[k] = (q.d1, q.theta2, q.theta3)
        log.qdot[k] = state.qdot
        log.x[k] = x
        log.xdot[k] = xdot
        log.xdot_des[k] = v_d
        log.xdot_safe[k] = v_s
        log.u[k] = u
        log.d[k] = d
        log.edot[k] = edot
        if nb:
            log.h[k] = _all_barrier_values(x, spec)
        log.active_rows[k] = safety.count_active_rows(v_s, rows) if rows else 0
        log.gate[k] = bool(rows)

        if k + 1 < n:
            state = rk4_step(state, u + d, dt, spec.dynamics)
    return log


def gate_engage_time(log: TrajectoryLog) -> Optional[float]:
    """Time of the first step with the filter engaged, None if it never was."""
    idx = np.nonzero(log.gate)[0]
    return float(log.t[idx[0]]) if idx.size else None


def summarize(log: TrajectoryLog, spec: ScenarioSpec,
              completion_tol: float = 0.5) -> SafetyReport:
    """Condense a log into the report numbers.

    path_completion counts reference samples approached within
    completion_tol [mm] at any time; reference samples pushed inside a
    keep-out sphere are unreachable by a safe run and lower the fraction.

    With an activation gate the run legitimately starts outside the safe
    set, so barrier statistics begin at the engagement step.
    """
    if len(log) == 0:
        raise EmptyLogError("cannot summarize an empty log")
    start = 0
    if log.h.size and spec.filter.enabled and spec.filter.activation_gate:
        idx = np.nonzero(log.gate)[0]
        if idx.size:
            start = int(idx[0])
    h = log.h[start:]
    min_h = {name: float(h[:, i].min()) for i, name in enumerate(log.barrier_names)}
    viol = np.nonzero((h < 0.0).any(axis=1))[0] if h.size else np.array([])
    first_violation = float(log.t[start + viol[0]]) if viol.size else None
    tracking = np.linalg.norm(log.xdot - log.xdot_safe, axis=1)
    try:
        decay = ctl.measure_decay_rate(log.t, log.edot)
    except ctl.InsufficientTransientError:
        decay = math.nan
    ref = spec.reference()
    dist, _ = cKDTree(log.x).query(ref.pos)
    completion = float(np.mean(dist <= completion_tol))
    deviation = float(np.trapezoid(np.linalg.norm(log.xdot_safe - log.xdot_des, axis=1),
                                   log.t))
    return SafetyReport(
        min_h=min_h,
        first_violation_time=first_violation,
        max_tracking_error=float(tracking.max()),
        decay_rate=decay,
        path_completion=completion,
        deviation_integral=deviation,
    )


# ---------------------------------------------------------------------------
# CSV round-trip

def _csv_columns(nb: int, names: list) -> list:
    cols = ["t_s",
            "d1_mm", "theta2_rad", "theta3_rad",
            "d1dot_mm_s", "theta2dot_rad_s", "theta3dot_rad_s",
            "x_mm", "y_mm", "z_mm",
            "xdot_mm_s", "ydot_mm_s", "zdot_mm_s",
            "xdot_des_x_mm_s", "xdot_des_y_mm_s", "xdot_des_z_mm_s",
            "xdot_safe_x_mm_s", "xdot_safe_y_mm_s", "xdot_safe_z_mm_s",
            "u_d1_gmm_s2", "u_th2_gmm2_s2", "u_th3_gmm2_s2",
            "d_d1_gmm_s2", "d_th2_gmm2_s2", "d_th3_gmm2_s2",
            "edot_d1_mm_s", "edot_th2_rad_s", "edot_th3_rad_s"]
    cols += [f"h_{name}_mm" for name in names]
    cols += ["active_rows", "gate"]
    return cols


def export_csv(log: TrajectoryLog, path) -> None:
    """Write the log; floats use shortest round-trip decimal form."""
    cols = _csv_columns(log.h.shape[1] if log.h.ndim == 2 else 0, log.barrier_names)
    with open(path, "w") as f:
        f.write(_CSV_VERSION + "\n")
        f.write(",".join(cols) + "\n")
        for k in range(len(log)):
            row = [log.t[k], *log.q[k], *log.qdot[k], *log.x[k], *log.xdot[k],
                   *log.xdot_des[k], *log.xdot_safe[k], *log.u[k], *log.d[k],
                   *log.edot[k], *log.h[k]]
            f.write(",".join(repr(float(v)) for v in row))
            f.write(f",{int(log.active_rows[k])},{int(log.gate[k])}\n")


def read_csv(path) -> TrajectoryLog:
    """Inverse of export_csv; raises ValueError on a foreign or damaged file."""
    with open(path) as f:
        version = f.readline().rstrip("\n")
        if version != _CSV_VERSION:
            raise ValueError(f"not a safecut log (header {version!r})")
        header = f.readline().rstrip("\n").split(",")
        rows = [line.rstrip("\n").split(",") for line in f if line.strip()]
    names = [c[2:-3] for c in header if c.startswith("h_") and c.endswith("_mm")]
    if _csv_columns(len(names), names) != header:
        raise ValueError("unexpected column layout")
    nb = len(names)
    data = np.array([[float(v) for v in r] for r in rows]) if rows else np.zeros((0, len(header)))
    return TrajectoryLog(
        t=data[:, 0],
        q=data[:, 1:4], qdot=data[:, 4:7], x=data[:, 7:10], xdot=data[:, 10:13],
        xdot_des=data[:, 13:16], xdot_safe=data[:, 16:19], u=data[:, 19:22],
        d=data[:, 22:25], edot=data[:, 25:28], h=data[:, 28:28 + nb],
        active_rows=data[:, 28 + nb].astype(np.int64),
        gate=data[:, 29 + nb].astype(bool),
        barrier_names=names,
    )


# ---------------------------------------------------------------------------
# figure data files

def _circle_samples(center, radius, count=256) -> np.ndarray:
    ang = 2.0 * math.pi * np.arange(count) / count
    return np.stack([center[0] + radius * np.cos(ang),
                     center[1] + radius * np.sin(ang),
                     np.full(count, center[2])], axis=1)


def export_plot_data(log: TrajectoryLog, spec: ScenarioSpec, out_dir) -> list:
    """Write scenario<id>_{path,barrier,velocity}.dat under out_dir.

    path: actual and reference trajectories, marking points with their
    unsafe flag, and boundary circles (cutting margins and depth shells)
    sampled in the marking plane.  barrier: every barrier value over time.
    velocity: desired, safe and actual tip velocity components.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sid = spec.scenario_id
    ref = spec.reference()
    written = []

    p = out / f"scenario{sid}_path.dat"
    with open(p, "w") as f:
        f.write(f"# scenario {sid} tip path, alpha = {spec.filter.alpha}\n")
        f.write("# section: actual  columns: t_s x_mm y_mm z_mm\n")
        for k in range(len(log)):
            f.write(f"{log.t[k]:.6f} {log.x[k, 0]:.6f} {log.x[k, 1]:.6f} {log.x[k, 2]:.6f}\n")
        f.write("\n# section: reference  columns: t_s x_mm y_mm z_mm\n")
        for k in range(len(ref.t)):
            f.write(f"{ref.t[k]:.6f} {ref.pos[k, 0]:.6f} {ref.pos[k, 1]:.6f} {ref.pos[k, 2]:.6f}\n")
        f.write("\n# section: markings  columns: loop point x_mm y_mm z_mm unsafe\n")
        for i, ms in enumerate(spec.markings):
            for j, (pt, bad) in enumerate(zip(ms.points, ms.unsafe)):
                f.write(f"{i} {j} {pt[0]:.6f} {pt[1]:.6f} {pt[2]:.6f} {int(bad)}\n")
        f.write("\n# section: boundary  columns: barrier x_mm y_mm z_mm\n")
        for i, tumor in enumerate(spec.tumors):
            for pt in _circle_samples(tumor.center, tumor.margin):
                f.write(f"tumor{i} {float(pt[0])!r} {float(pt[1])!r} {float(pt[2])!r}\n")
        for j, shell in enumerate(spec.shells):
            for pt in _circle_samples(shell.center, shell.outer_radius):
                f.write(f"shell{j} {float(pt[0])!r} {float(pt[1])!r} {float(pt[2])!r}\n")
    written.append(p)

    p = out / f"scenario{sid}_barrier.dat"
    with open(p, "w") as f:
        f.write(f"# scenario {sid} barrier values, alpha = {spec.filter.alpha}\n")
        f.write("# columns: t_s " + " ".join(f"h_{n}_mm" for n in log.barrier_names)
                + " gate\n")
        for k in range(len(log)):
            hs = " ".join(f"{v:.9f}" for v in log.h[k])
            f.write(f"{log.t[k]:.6f} {hs} {int(log.gate[k])}\n")
    written.append(p)

    p = out / f"scenario{sid}_velocity.dat"
    with open(p, "w") as f:
        f.write(f"# scenario {sid} tip velocities\n")
        f.write("# columns: t_s vdes_x vdes_y vdes_z vsafe_x vsafe_y vsafe_z "
                "vact_x vact_y vact_z  [mm/s]\n")
        for k in range(len(log)):
            vals = [*log.xdot_des[k], *log.xdot_safe[k], *log.xdot[k]]
            f.write(f"{log.t[k]:.6f} " + " ".join(f"{v:.6f}" for v in vals) + "\n")
    written.append(p)
    return written
