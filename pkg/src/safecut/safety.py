"""Safety layer: keep-out barriers, cutting-depth shell, and the velocity filter.

Each tumor carries a spherical keep-out region of radius equal to its cutting
margin.  The barrier value h = ||x - center|| - margin is positive outside,
zero on the ideal cutting surface, negative inside.  A depth shell bounds how
far the tip may wander outward while dissecting: its barrier
h = outer_radius - ||x - center|| is positive inside the shell.

The filter solves, at every control step,

    minimize    || v_s - v_d ||^2
    subject to  n_i . v_s >= -alpha * h_i     for every emitted row,

which keeps the commanded velocity safe while deviating minimally from the
desired one.  With at most a handful of rows in 3-D the program is solved
exactly by enumerating candidate active sets and checking the KKT conditions,
so no iterative QP solver and no solver tolerance enters the control path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

_DUAL_TOL = 1e-9
_FEAS_TOL = 1e-9
_TIE_TOL = 1e-12


class DegeneratePointError(ValueError):
    """Barrier gradient requested at a sphere centre, where it is undefined."""


class InfeasibleQPError(RuntimeError):
    """No velocity satisfies every constraint row."""


class EmptyLogError(ValueError):
    """A margin was requested over a log with no recorded steps."""


@dataclass
class TumorSpec:
    """A marked tumor: centre [mm], cutting margin [mm], removable flag."""

    center: np.ndarray
    margin: float
    removable: bool = True

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.margin <= 0.0:
            raise ValueError("cutting margin must be positive")


@dataclass
class DepthShell:
    """Outer containment sphere around a dissection site."""

    center: np.ndarray
    outer_radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.outer_radius <= 0.0:
            raise ValueError("outer radius must be positive")


@dataclass
class HalfspaceConstraint:
    """One row n . v >= offset of the velocity program."""

    normal: np.ndarray
    offset: float


@dataclass
class FilterParams:
    """Filter configuration.

    alpha: class-K gain [1/s] on the barrier value; larger values allow
        faster approach toward a boundary (less conservative).
    mode: "keep_out_only" emits one row per tumor; "keep_out_and_depth"
        emits, per tumor/shell pair, only the row of whichever barrier is
        currently closer (smaller h).  Ties emit both rows.
    activation_gate: when True the filter stays disengaged until every
        selected barrier is non-negative, mirroring an approach from outside
        the permitted shell; once engaged it never disengages.
    enabled: False bypasses filtering entirely (counterfactual runs).
    """

    alpha: float = 0.4
    mode: str = "keep_out_only"
    activation_gate: bool = False
    enabled: bool = True

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.mode not in ("keep_out_only", "keep_out_and_depth"):
            raise ValueError(f"unknown filter mode {self.mode!r}")


@dataclass
class SafeSetSpec:
    """All barriers of a scenario.  Shells pair with their nearest tumor."""

    tumors: list
    shells: list

    def __post_init__(self):
        for shell in self.shells:
            i = _paired_tumor_index(shell, self.tumors)
            if i is not None and shell.outer_radius <= self.tumors[i].margin:
                raise ValueError("depth shell must lie outside the paired cutting margin")


def barrier_value(x: np.ndarray, tumor: TumorSpec) -> float:
    """Signed distance to the keep-out sphere: positive outside."""
    return float(np.linalg.norm(x - tumor.center)) - tumor.margin


def barrier_gradient(x: np.ndarray, tumor: TumorSpec) -> np.ndarray:
    """Row gradient of the keep-out barrier, the unit vector away from centre."""
    diff = x - tumor.center
    dist = float(np.linalg.norm(diff))
    if dist < 1e-9:
        raise DegeneratePointError("barrier gradient undefined at the sphere centre")
    return diff / dist


def depth_barrier_value(x: np.ndarray, shell: DepthShell) -> float:
    """Containment barrier: positive inside the shell."""
    return shell.outer_radius - float(np.linalg.norm(x - shell.center))


def depth_barrier_gradient(x: np.ndarray, shell: DepthShell) -> np.ndarray:
    """Row gradient of the depth barrier, the unit vector toward centre."""
    diff = x - shell.center
    dist = float(np.linalg.norm(diff))
    if dist < 1e-9:
        raise DegeneratePointError("depth gradient undefined at the shell centre")
    return -diff / dist


def _paired_tumor_index(shell: DepthShell, tumors: list) -> Optional[int]:
    if not tumors:
        return None
    return min(range(len(tumors)),
               key=lambda i: float(np.linalg.norm(tumors[i].center - shell.center)))


def selected_barrier_values(x: np.ndarray, spec: SafeSetSpec, params: FilterParams) -> list:
    """Barriers the filter acts on at x, as (kind, index, h, normal) tuples.

    kind is "tumor" or "shell".  In keep_out_only mode every tumor is
    selected and shells are ignored.  In keep_out_and_depth mode each
    tumor/shell pair contributes its closer barrier; a tie within 1e-12
    contributes both, and unpaired members contribute unconditionally.
    """
    selected = []
    if params.mode == "keep_out_only":
        for i, tumor in enumerate(spec.tumors):
            selected.append(("tumor", i, barrier_value(x, tumor), barrier_gradient(x, tumor)))
        return selected

    paired = {}
    for j, shell in enumerate(spec.shells):
        i = _paired_tumor_index(shell, spec.tumors)
        if i is None:
            selected.append(("shell", j, depth_barrier_value(x, shell),
                             depth_barrier_gradient(x, shell)))
        else:
            paired.setdefault(i, []).append(j)
    for i, tumor in enumerate(spec.tumors):
        h_in = barrier_value(x, tumor)
        shells = paired.get(i, [])
        if not shells:
            selected.append(("tumor", i, h_in, barrier_gradient(x, tumor)))
            continue
        for j in shells:
            shell = spec.shells[j]
            h_out = depth_barrier_value(x, shell)
            if abs(h_in - h_out) <= _TIE_TOL:
                selected.append(("tumor", i, h_in, barrier_gradient(x, tumor)))
                selected.append(("shell", j, h_out, depth_barrier_gradient(x, shell)))
            elif h_in < h_out:
                selected.append(("tumor", i, h_in, barrier_gradient(x, tumor)))
            else:
                selected.append(("shell", j, h_out, depth_barrier_gradient(x, shell)))
    return selected


def assemble_constraints(x: np.ndarray, spec: SafeSetSpec, params: FilterParams) -> list:
    """Constraint rows n . v >= -alpha * h for the barriers selected at x."""
    return [
        HalfspaceConstraint(normal, -params.alpha * h)
        for _, _, h, normal in selected_barrier_values(x, spec, params)
    ]


def safety_filter(v_d: np.ndarray, rows: list) -> np.ndarray:
    """Closest safe velocity to v_d under the given halfspace rows.

    Exact active-set enumeration: if v_d satisfies every row it is returned
    unchanged; otherwise all candidate active subsets of size 1..3 are
    tried and the first KKT-consistent projection (non-negative multipliers,
    all rows satisfied) is the unique optimum.  Raises InfeasibleQPError when
    the rows admit no solution.
    """
    v_d = np.asarray(v_d, dtype=float)
    if not rows:
        return v_d.copy()
    N = np.array([r.normal for r in rows], dtype=float)
    b = np.array([r.offset for r in rows], dtype=float)
    if np.all(N @ v_d >= b):
        return v_d.copy()

    k = len(rows)
    for size in (1, 2, 3):
        if size > k:
            break
        for subset in _subsets(k, size):
            idx = list(subset)
            NA = N[idx, :]
            resid = b[idx] - NA @ v_d
            G = NA @ NA.T
            try:
                mu = np.linalg.solve(G, resid)
            except np.linalg.LinAlgError:
                continue
            # tolerances scale with the candidate so ill-conditioned rows
            # (nearly parallel normals, distant optima) stay decidable
            if not np.all(np.isfinite(mu)) or \
                    np.max(np.abs(G @ mu - resid)) > 1e-7 * max(1.0, float(np.linalg.norm(resid))):
                continue
            if np.min(mu) < -_DUAL_TOL * max(1.0, float(np.linalg.norm(mu))):
                continue
            v = v_d + NA.T @ mu
            if np.all(N @ v >= b - _FEAS_TOL * max(1.0, float(np.linalg.norm(v)))):
                return v
    raise InfeasibleQPError(f"no velocity satisfies all {k} constraint rows")


def _subsets(k: int, size: int):
    if size == 1:
        return [(i,) for i in range(k)]
    if size == 2:
        return [(i, j) for i in range(k) for j in range(i + 1, k)]
    return [(i, j, l) for i in range(k) for j in range(i + 1, k) for l in range(j + 1, k)]


def count_active_rows(v: np.ndarray, rows: list, tol: float = 1e-6) -> int:
    """Rows met with equality at v, the filter's active set."""
    return sum(1 for r in rows if abs(float(r.normal @ v) - r.offset) <= tol)


def issf_margin(h_log: np.ndarray, d_bound: float = 0.0) -> float:
    """Worst barrier value over a run, the empirical safety margin.

    h_log: array of shape (steps, barriers).  d_bound is the sup-norm bound
    of the disturbance the run was driven with; it is recorded with the
    margin by callers building amplitude sweeps.
    """
    h_log = np.asarray(h_log, dtype=float)
    if h_log.size == 0:
        raise EmptyLogError("cannot take a margin over an empty log")
    return float(h_log.min())
