"""Cartesian compliance law and a 1-DOF contact-force regulation demo.

Units inside this module are SI: meters, Newtons, N/m. Convert from the
millimeter world at the boundary.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NegativeStiffness, UnstableParameters

STIFFNESS_BAND_NM = (125.0, 500.0)  # usual k_g range along the probe centerline


@dataclass(frozen=True)
class ComplianceParams:
    k_translation: float = 2000.0   # k_t, N/m (x, y)
    k_centerline: float = 300.0     # k_g, N/m (z, force-regulated axis)
    k_rotation: float = 50.0        # k_r, Nm/rad
    desired_force: float = 8.0      # F_c, N, pushed along +z
    damping: tuple = (80.0, 80.0, 80.0, 5.0, 5.0, 5.0)  # d_m per axis

    def __post_init__(self):
        for v in (self.k_translation, self.k_centerline, self.k_rotation, *self.damping):
            if v < 0:
                raise NegativeStiffness(f"negative coefficient {v}")
        lo, hi = STIFFNESS_BAND_NM
        if not (lo <= self.k_centerline <= hi):
            warnings.warn(f"k_g={self.k_centerline} N/m outside the usual [{lo}, {hi}] band",
                          stacklevel=2)

    @property
    def desired_wrench(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.desired_force, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class RobotState:
    pose: np.ndarray       # x_c, 6-vector (m, rad)
    velocity: np.ndarray   # 6-vector
    jacobian: np.ndarray   # 6 x n

    def __post_init__(self):
        pose = np.asarray(self.pose, dtype=float).reshape(-1)
        vel = np.asarray(self.velocity, dtype=float).reshape(-1)
        jac = np.asarray(self.jacobian, dtype=float)
        if pose.shape != (6,) or vel.shape != (6,) or jac.ndim != 2 or jac.shape[0] != 6:
            raise DimensionMismatch("pose/velocity must be 6-vectors, jacobian 6 x n")
        if not np.all(np.isfinite(jac)):
            raise DimensionMismatch("jacobian contains non-finite entries")
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "velocity", vel)
        object.__setattr__(self, "jacobian", jac)


def build_stiffness(params: ComplianceParams) -> np.ndarray:
    """Diagonal(k_t, k_t, k_g, k_r, k_r, k_r)."""
    return np.diag([params.k_translation, params.k_translation, params.k_centerline,
                    params.k_rotation, params.k_rotation, params.k_rotation])


def compliance_torque(state: RobotState, x_d: np.ndarray, params: ComplianceParams,
                      f_dyn: np.ndarray | None = None) -> np.ndarray:
    """Joint torques tau = J^T [K (x_d - x_c) + F_d] + D(d_m) + f_dyn.

    The damping term is Cartesian viscous damping mapped through J^T:
    D(d_m) = -J^T diag(d_m) * velocity. f_dyn (the arm's dynamic model) is
    passed through verbatim; it defaults to zero.
    """
    x_d = np.asarray(x_d, dtype=float).reshape(-1)
    if x_d.shape != (6,):
        raise DimensionMismatch("x_d must be a 6-vector")
    n = state.jacobian.shape[1]
    if f_dyn is None:
        f_dyn = np.zeros(n)
    f_dyn = np.asarray(f_dyn, dtype=float).reshape(-1)
    if f_dyn.shape != (n,):
        raise DimensionMismatch(f"f_dyn must have {n} entries")
    k = build_stiffness(params)
    wrench = k @ (x_d - state.pose) + params.desired_wrench
    damping = -state.jacobian.T @ (np.diag(params.damping) @ state.velocity)
    return state.jacobian.T @ wrench + damping + f_dyn


@dataclass(frozen=True)
class ForceTrace:
    t: np.ndarray
    penetration: np.ndarray  # m, into the surface
    force: np.ndarray        # N, contact force

    def steady_state_force(self, tail: int = 100) -> float:
        return float(self.force[-tail:].mean())

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "penetration", "force"])
            for row in zip(self.t, self.penetration, self.force):
                w.writerow([f"{v:.9g}" for v in row])


def simulate_contact(params: ComplianceParams, surface_stiffness: float,
                     steps: int = 20000, dt: float = 1e-3, mass: float = 1.0) -> ForceTrace:
    """1-DOF contact along the probe centerline driven by the compliance law.

    A unit mass presses into a spring surface (force = k_s * penetration).
    The position reference along the force-regulated axis is rebased to the
    previously measured position each step, so the desired force acts as a
    pure feedforward and the steady-state contact force equals F_c
    regardless of k_g and k_s.
    """
    if surface_stiffness <= 0:
        raise UnstableParameters("surface stiffness must be positive")
    limit = 2.0 * np.sqrt(mass / (params.k_centerline + surface_stiffness))
    if dt >= limit:
        raise UnstableParameters(f"dt={dt} exceeds stability limit {limit:.4g}")
    k_g = params.k_centerline
    d = params.damping[2]
    f_c = params.desired_force
    x = 0.0   # penetration coordinate, m; surface at 0
    v = 0.0
    x_ref = 0.0
    t = np.arange(steps) * dt
    pen = np.empty(steps)
    force = np.empty(steps)
    for i in range(steps):
        contact = surface_stiffness * max(x, 0.0)
        cmd = k_g * (x_ref - x) + f_c - d * v
        a = (cmd - contact) / mass
        x_ref = x
        v += a * dt
        x += v * dt
        pen[i] = max(x, 0.0)
        force[i] = surface_stiffness * pen[i]
    return ForceTrace(t, pen, force)
