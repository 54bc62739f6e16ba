"""State validity checking and interaction measures.

A propagated world is valid when the robot stays inside the workspace and
under its velocity limits, nothing ever touched the target object, the
robot never hit a fixed obstacle, every movable object stayed under the
speed threshold for the whole propagation, and every movable object ended
inside the table region. Robot-movable and movable-movable contact is the
point of the planner and is always permitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .physics import FIXED, MOVABLE, PropagationTrace, WorldState


@dataclass(frozen=True)
class Rect:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("rectangle must have positive extent")

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def contains_rect(self, other: "Rect") -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and self.x_max >= other.x_max and self.y_max >= other.y_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


@dataclass(frozen=True)
class ControlBounds:
    """Symmetric axis bounds on the robot wrench (fx, fy, torque)."""

    fx: float
    fy: float
    torque: float

    def __post_init__(self):
        if min(self.fx, self.fy, self.torque) < 0.0:
            raise ValueError("control bounds must be >= 0")


@dataclass(frozen=True)
class ValidityConstraints:
    workspace: Rect
    table: Rect
    robot_speed_limit: float
    robot_spin_limit: float
    object_speed_limit: float
    displacement_limit: float
    control_bounds: ControlBounds
    forbid_target_contact: bool = True

    def __post_init__(self):
        vals = (self.robot_speed_limit, self.robot_spin_limit,
                self.object_speed_limit, self.displacement_limit)
        if any(not math.isfinite(v) or v < 0.0 for v in vals):
            raise ValueError("constraint thresholds must be finite and >= 0")
        if not self.workspace.contains_rect(self.table):
            raise ValueError("table region must lie inside the workspace")


def validity_check(world: WorldState, constraints: ValidityConstraints,
                   trace: PropagationTrace) -> bool:
    """Check a propagated world against all kinodynamic and interaction rules."""
    m = world.model
    rx, ry, _ = world.robot_pose
    if not constraints.workspace.contains(rx, ry):
        return False
    vx, vy, om = world.robot_velocity
    if math.hypot(vx, vy) > constraints.robot_speed_limit:
        return False
    if abs(om) > constraints.robot_spin_limit:
        return False
    if constraints.forbid_target_contact and m.target_index >= 0:
        if trace.contact_any[m.target_index].any():
            return False
    fixed = np.flatnonzero(m.classes == FIXED)
    if fixed.size and trace.contact_any[m.robot_index, fixed].any():
        return False
    movable = np.flatnonzero(m.classes == MOVABLE)
    if movable.size:
        if np.any(trace.peak_speed[movable] > constraints.object_speed_limit):
            return False
        for i in movable:
            if not constraints.table.contains(world.poses[i, 0], world.poses[i, 1]):
                return False
    return True


def initial_trace(world: WorldState) -> PropagationTrace:
    """A null trace for a world that has not been propagated yet.

    Carries the current speeds and no contacts; used to validity-check the
    query's initial state with the same contract as propagated states.
    """
    n = world.model.n_bodies
    speeds = np.hypot(world.velocities[:, 0], world.velocities[:, 1])
    return PropagationTrace(
        states_pose=world.poses[None, :, :].copy(),
        states_vel=world.velocities[None, :, :].copy(),
        peak_speed=speeds,
        contact_any=np.zeros((n, n), bool),
        duration=0.0,
        n_steps=0,
    )


def displacement_of_objects(before: WorldState, after: WorldState) -> np.ndarray:
    """Per-object translation distance of body centers (robot excluded).

    Rotation does not count as displacement; only the center matters.
    """
    pb = before.object_poses()
    pa = after.object_poses()
    if pb.shape != pa.shape:
        raise ValueError(
            f"object count mismatch: before has {pb.shape[0]}, after has {pa.shape[0]}")
    d = pa[:, :2] - pb[:, :2]
    return np.hypot(d[:, 0], d[:, 1])


def interaction_evaluator(disp: np.ndarray, d_disp: float) -> bool:
    """True when no displacement exceeds the threshold (boundary inclusive)."""
    if len(disp) == 0:
        return True
    return bool(np.max(disp) <= d_disp)
