"""Self-contained verification suites: each checks the implementation against
an independent route (brute-force program solve, finite differences, energy
bookkeeping, step-halving), never against the code it is checking.

Every suite returns (passed, detail).  The registry VERIFY_SUITES drives the
command-line `verify` subcommand and keeps suite names stable.
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

from .dynamics import (DynamicParams, JointConfig, RobotState, coriolis_matrix,
                       forward_dynamics, gravity_vector, kinetic_energy,
                       mass_matrix, potential_energy, rk4_step)
from .kinematics import KinematicParams, forward_kinematics, jacobian
from .safety import (DepthShell, HalfspaceConstraint, InfeasibleQPError,
                     TumorSpec, barrier_gradient, barrier_value,
                     depth_barrier_gradient, depth_barrier_value, safety_filter)


def qp_reference(v_d: np.ndarray, rows: list):
    """Brute-force reference solve of the velocity program.

    Enumerates every subset of rows as a candidate active set, solves the
    stacked KKT system by least squares, and returns the feasible candidate
    of smallest objective; None when no candidate is feasible.  Selection is
    by objective value alone, with no multiplier-sign reasoning, so the
    decision path is independent of the filter's.
    """
    v_d = np.asarray(v_d, dtype=float)
    if not rows:
        return v_d.copy()
    N = np.array([r.normal for r in rows], dtype=float)
    b = np.array([r.offset for r in rows], dtype=float)
    k = len(rows)
    best = None
    best_obj = math.inf
    for size in range(0, min(k, 3) + 1):
        for subset in combinations(range(k), size):
            if size == 0:
                v = v_d.copy()
            else:
                NA = N[list(subset), :]
                top = np.hstack([np.eye(3), -NA.T])
                bot = np.hstack([NA, np.zeros((size, size))])
                kkt = np.vstack([top, bot])
                rhs = np.concatenate([v_d, b[list(subset)]])
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
                v = sol[:3]
            if np.all(N @ v >= b - 1e-9 * max(1.0, float(np.linalg.norm(v)))):
                obj = float(np.sum((v - v_d) ** 2))
                if obj < best_obj:
                    best, best_obj = v, obj
    return best


def random_qp_instance(rng: np.random.Generator):
    v_d = rng.normal(0.0, 3.0, 3)
    k = int(rng.integers(1, 4))
    normals = rng.normal(0.0, 1.0, (k, 3))
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    offsets = rng.uniform(-4.0, 4.0, k)
    if k >= 2 and rng.random() < 0.15:
        # (near-)antipodal pair: infeasible whenever the offsets sum positive
        normals[1] = -normals[0]
        if rng.random() < 0.5:
            normals[1] += rng.normal(0.0, 1e-3, 3)
            normals[1] /= np.linalg.norm(normals[1])
        offsets[:2] = rng.uniform(-1.0, 3.0, 2)
    rows = [HalfspaceConstraint(n, float(o)) for n, o in zip(normals, offsets)]
    return v_d, rows


def check_qp_oracle(instances: int = 10000, seed: int = 0):
    """Filter output equals the brute-force reference on random programs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    infeasible = 0
    for i in range(instances):
        v_d, rows = random_qp_instance(rng)
        expected = qp_reference(v_d, rows)
        if expected is None:
            infeasible += 1
            try:
                safety_filter(v_d, rows)
            except InfeasibleQPError:
                continue
            return False, f"instance {i}: filter solved an infeasible program"
        try:
            got = safety_filter(v_d, rows)
        except InfeasibleQPError:
            return False, f"instance {i}: filter rejected a feasible program"
        err = float(np.linalg.norm(got - expected)) / max(1.0, float(np.linalg.norm(expected)))
        worst = max(worst, err)
        if err > 1e-3:
            return False, f"instance {i}: relative deviation {err:.2e}"
    return True, (f"{instances} random programs, {infeasible} infeasible, "
                  f"worst relative deviation {worst:.2e}")


def _random_config(rng: np.random.Generator) -> JointConfig:
    return JointConfig(float(rng.uniform(0.0, 50.0)),
                       float(rng.uniform(-math.pi / 2, math.pi / 2)),
                       float(rng.uniform(-math.pi / 2, math.pi / 2)))


def check_jacobian_fd(samples: int = 200, seed: int = 1):
    """Analytic Jacobian against central differences of the kinematics."""
    rng = np.random.default_rng(seed)
    kin = KinematicParams()
    step = 1e-6
    worst = 0.0
    for _ in range(samples):
        q = _random_config(rng)
        J = jacobian(q, kin)
        arr = q.as_array()
        for j in range(3):
            plus, minus = arr.copy(), arr.copy()
            plus[j] += step
            minus[j] -= step
            col = (forward_kinematics(JointConfig.from_array(plus), kin)
                   - forward_kinematics(JointConfig.from_array(minus), kin)) / (2 * step)
            worst = max(worst, float(np.max(np.abs(col - J[:, j]))))
    return worst <= 1e-4, f"{samples} samples, worst column error {worst:.2e} (tol 1e-4)"


def check_barrier_gradients_fd(samples: int = 200, seed: int = 2):
    """Barrier gradients against central differences, plus unit norm."""
    rng = np.random.default_rng(seed)
    step = 1e-6
    worst = 0.0
    for _ in range(samples):
        center = rng.uniform(-20.0, 40.0, 3)
        tumor = TumorSpec(center, float(rng.uniform(1.0, 8.0)))
        shell = DepthShell(center, float(rng.uniform(2.0, 12.0)))
        x = center + rng.uniform(0.5, 15.0) * _unit(rng)
        for value, grad, obj in ((barrier_value, barrier_gradient, tumor),
                                 (depth_barrier_value, depth_barrier_gradient, shell)):
            g = grad(x, obj)
            worst = max(worst, abs(float(np.linalg.norm(g)) - 1.0))
            for j in range(3):
                plus, minus = x.copy(), x.copy()
                plus[j] += step
                minus[j] -= step
                fd = (value(plus, obj) - value(minus, obj)) / (2 * step)
                worst = max(worst, abs(fd - float(g[j])))
    return worst <= 1e-6, f"{samples} samples, worst deviation {worst:.2e} (tol 1e-6)"


def _unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(0.0, 1.0, 3)
    return v / np.linalg.norm(v)


def check_mass_matrix_spd(samples: int = 1000, seed: int = 3):
    """Symmetry and positive definiteness across the workspace."""
    rng = np.random.default_rng(seed)
    params = DynamicParams()
    min_eig = math.inf
    for _ in range(samples):
        M = mass_matrix(_random_config(rng), params)
        if float(np.max(np.abs(M - M.T))) > 0.0:
            return False, "mass matrix not exactly symmetric"
        min_eig = min(min_eig, float(np.linalg.eigvalsh(M).min()))
    return min_eig > 0.0, f"{samples} samples, smallest eigenvalue {min_eig:.3e}"


def check_skew_symmetry(samples: int = 200, seed: int = 4):
    """dM/dt - 2C plus its transpose vanishes; dM/dt by Richardson differences."""
    rng = np.random.default_rng(seed)
    params = DynamicParams()

    def mdot_fd(q: JointConfig, qd: np.ndarray) -> np.ndarray:
        arr = q.as_array()

        def central(h):
            mp = mass_matrix(JointConfig.from_array(arr + h * qd), params)
            mm = mass_matrix(JointConfig.from_array(arr - h * qd), params)
            return (mp - mm) / (2.0 * h)

        h = 1e-3
        return (4.0 * central(h / 2) - central(h)) / 3.0

    worst = 0.0
    for _ in range(samples):
        q = _random_config(rng)
        qd = rng.normal(0.0, 1.0, 3)
        resid = mdot_fd(q, qd) - 2.0 * coriolis_matrix(q, qd, params)
        worst = max(worst, float(np.max(np.abs(resid + resid.T))))
    return worst <= 1e-8, f"{samples} states, worst residual {worst:.2e} (tol 1e-8)"


def check_dynamics_residual(samples: int = 200, seed: int = 5):
    """forward_dynamics inverts the equations of motion to 1e-9."""
    rng = np.random.default_rng(6 + seed)
    params = DynamicParams()
    worst = 0.0
    for _ in range(samples):
        q = _random_config(rng)
        qd = rng.normal(0.0, 1.0, 3)
        u = rng.normal(0.0, 1e4, 3)
        qdd = forward_dynamics(RobotState(q, qd), u, params)
        resid = (mass_matrix(q, params) @ qdd + coriolis_matrix(q, qd, params) @ qd
                 + gravity_vector(q, params) - u)
        worst = max(worst, float(np.max(np.abs(resid))))
    return worst <= 1e-9, f"{samples} states, worst residual {worst:.2e} (tol 1e-9)"


def check_energy_audit(gravity_sign: float = 1.0):
    """Free motion conserves energy.

    Two passes: a zero-gravity coast whose kinetic energy must hold to 1e-6
    relative over one second at the control dt, and a gravity pass whose
    total energy is booked with kinetic_energy/potential_energy.
    gravity_sign is a fault-injection hook: anything but +1 corrupts the
    potential bookkeeping and must make the audit fail.
    """
    free = DynamicParams(gravity=(0.0, 0.0, 0.0))
    state = RobotState(JointConfig(10.0, 0.2, -0.3), np.array([4.0, 0.6, -0.8]))
    ke0 = kinetic_energy(state, free)
    drift = 0.0
    for _ in range(1000):
        state = rk4_step(state, np.zeros(3), 1e-3, free)
        drift = max(drift, abs(kinetic_energy(state, free) - ke0) / ke0)
    if drift > 1e-6:
        return False, f"zero-gravity kinetic drift {drift:.2e} (tol 1e-6)"

    # Gravity along x keeps the free motion a bounded swing: the prismatic
    # joint sees no net load, so total energy stays near the kinetic scale.
    grav = DynamicParams(gravity=(9810.0, 0.0, 0.0))
    book = DynamicParams(gravity=tuple(gravity_sign * g for g in grav.gravity))
    state = RobotState(JointConfig(10.0, 0.3, -0.2), np.array([2.0, 0.4, -0.5]))
    e0 = kinetic_energy(state, book) + potential_energy(state, book)
    scale = max(kinetic_energy(state, book), 1.0)
    drift = 0.0
    for _ in range(5000):
        state = rk4_step(state, np.zeros(3), 2e-4, grav)
        scale = max(scale, kinetic_energy(state, book))
        e = kinetic_energy(state, book) + potential_energy(state, book)
        drift = max(drift, abs(e - e0))
    rel = drift / scale
    if rel > 1e-6:
        return False, f"total-energy drift {rel:.2e} relative (tol 1e-6)"
    return True, f"kinetic and total-energy drift within 1e-6 (worst {rel:.2e})"


def check_rk4_order():
    """Observed convergence order of the integrator is at least 3.8.

    Gravity along x drives a stiff bounded swing; the step pair sits inside
    the asymptotic range with errors well above the roundoff floor.
    """
    params = DynamicParams(gravity=(9810.0, 0.0, 0.0))
    u = np.array([2000.0, 1000.0, -800.0])
    horizon = 0.1

    def integrate(dt: float) -> np.ndarray:
        state = RobotState(JointConfig(10.0, 0.3, -0.2), np.array([3.0, 0.5, -0.7]))
        for _ in range(int(round(horizon / dt))):
            state = rk4_step(state, u, dt, params)
        return np.concatenate([state.q.as_array(), state.qdot])

    ref = integrate(horizon / 40000)
    e1 = float(np.linalg.norm(integrate(5e-4) - ref))
    e2 = float(np.linalg.norm(integrate(2.5e-4) - ref))
    order = math.log2(e1 / e2)
    return order >= 3.8, f"observed order {order:.2f} from step halving (need >= 3.8)"


VERIFY_SUITES = (
    ("qp-oracle", check_qp_oracle),
    ("jacobian-fd", check_jacobian_fd),
    ("barrier-gradients-fd", check_barrier_gradients_fd),
    ("mass-matrix-spd", check_mass_matrix_spd),
    ("skew-symmetry", check_skew_symmetry),
    ("dynamics-residual", check_dynamics_residual),
    ("energy-audit", check_energy_audit),
    ("rk4-order", check_rk4_order),
)
