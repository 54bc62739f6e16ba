"""Deterministic planar rigid-body propagator for a tabletop world.

The world is viewed top-down: gravity enters only through sliding friction
against the table surface. One body is the force-controlled robot; the
rest are target / movable / fixed objects. Propagation is semi-implicit
Euler at a fixed timestep with sequential-impulse contacts (restitution 0)
and is a pure function of its inputs: identical calls produce bit-identical
worlds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _engine

ROBOT, TARGET, MOVABLE, FIXED = 0, 1, 2, 3
_CLASS_CODES = {"robot": ROBOT, "target": TARGET, "movable": MOVABLE, "fixed": FIXED}
_CLASS_NAMES = {v: k for k, v in _CLASS_CODES.items()}


class PropagationError(RuntimeError):
    """Solver produced a non-finite state; carries the failing step index."""

    def __init__(self, step: int):
        super().__init__(f"propagation diverged to a non-finite state at step {step}")
        self.step = step


class _Counter:
    """Instrumentation hook: counts propagator calls and simulated seconds."""

    __slots__ = ("count", "sim_time")

    def __init__(self):
        self.count = 0
        self.sim_time = 0.0


propagations = _Counter()


@dataclass(frozen=True)
class Disk:
    radius: float

    def default_inertia(self, mass: float) -> float:
        return 0.5 * mass * self.radius ** 2

    def min_extent(self) -> float:
        return self.radius


@dataclass(frozen=True)
class Box:
    half_x: float
    half_y: float

    def default_inertia(self, mass: float) -> float:
        return mass * (self.half_x ** 2 + self.half_y ** 2) / 3.0

    def min_extent(self) -> float:
        return min(self.half_x, self.half_y)


@dataclass
class Body:
    """One rigid body: shape, pose (x, y, theta), velocity (vx, vy, omega)."""

    name: str
    shape: Disk | Box
    pose: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mass: float = 1.0
    inertia: float | None = None
    body_class: str = "movable"
    support_friction: float = 0.0

    def __post_init__(self):
        if self.body_class not in _CLASS_CODES:
            raise ValueError(f"unknown body class {self.body_class!r}")
        if self.body_class != "fixed" and self.mass <= 0.0:
            raise ValueError(f"body {self.name!r}: mass must be > 0")
        if self.inertia is None:
            self.inertia = self.shape.default_inertia(self.mass)
        if self.body_class != "fixed" and self.inertia <= 0.0:
            raise ValueError(f"body {self.name!r}: inertia must be > 0")
        if self.support_friction < 0.0:
            raise ValueError(f"body {self.name!r}: support friction must be >= 0")
        x, y, th = self.pose
        self.pose = (float(x), float(y), float(_engine.wrap_angle(float(th))))
        self.velocity = tuple(float(v) for v in self.velocity)


@dataclass(frozen=True)
class ContactParams:
    """Contact-solver triple: Coulomb friction, CFM softness, ERP correction."""

    friction: float = 0.4
    softness: float = 0.0
    correction: float = 0.2

    def __post_init__(self):
        if self.friction < 0.0:
            raise ValueError("contact friction must be >= 0")
        if self.softness < 0.0:
            raise ValueError("contact softness must be >= 0")
        if not 0.0 <= self.correction <= 1.0:
            raise ValueError("position correction must be in [0, 1]")


@dataclass(frozen=True)
class Control:
    """Planar wrench (fx, fy, torque) held for a fixed duration."""

    wrench: tuple[float, float, float]
    duration: float

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("control duration must be > 0")
        if not all(math.isfinite(w) for w in self.wrench):
            raise ValueError("control wrench must be finite")


@dataclass(frozen=True)
class Disturbance:
    """Additive wrench noise applied on top of a nominal control."""

    wrench: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not all(math.isfinite(w) for w in self.wrench):
            raise ValueError("disturbance wrench must be finite")


ZERO_DISTURBANCE = Disturbance()


class WorldModel:
    """Immutable per-world data: shapes, masses, classes, solver settings.

    Shared by every WorldState derived from the same body list, so copying
    a state only copies its pose/velocity arrays.
    """

    def __init__(self, bodies: list[Body], dt: float = 0.005,
                 gravity: float = 9.81, solver_iterations: int = 10):
        if dt <= 0.0:
            raise ValueError("dt must be > 0")
        n = len(bodies)
        robots = [i for i, b in enumerate(bodies) if b.body_class == "robot"]
        targets = [i for i, b in enumerate(bodies) if b.body_class == "target"]
        if len(robots) != 1:
            raise ValueError(f"world needs exactly one robot body, got {len(robots)}")
        if len(targets) > 1:
            raise ValueError(f"world allows at most one target body, got {len(targets)}")
        names = [b.name for b in bodies]
        if len(set(names)) != n:
            raise ValueError("body names must be unique")

        self.dt = float(dt)
        self.gravity = float(gravity)
        self.solver_iterations = int(solver_iterations)
        self.names = tuple(names)
        self.robot_index = robots[0]
        self.target_index = targets[0] if targets else -1
        self.classes = np.array([_CLASS_CODES[b.body_class] for b in bodies], np.int64)
        self.kind = np.array([0 if isinstance(b.shape, Disk) else 1 for b in bodies], np.int64)
        self.sa = np.array([b.shape.radius if isinstance(b.shape, Disk) else b.shape.half_x
                            for b in bodies])
        self.sb = np.array([0.0 if isinstance(b.shape, Disk) else b.shape.half_y
                            for b in bodies])
        self.shapes = tuple(b.shape for b in bodies)
        self.mass = np.array([b.mass for b in bodies])
        self.inertia = np.array([b.inertia for b in bodies])
        fixed = self.classes == FIXED
        self.inv_mass = np.where(fixed, 0.0, 1.0 / self.mass)
        self.inv_inertia = np.where(fixed, 0.0, 1.0 / self.inertia)
        self.support_mu = np.array([b.support_friction for b in bodies])
        self.gyration = np.where(fixed, 0.0, np.sqrt(self.inertia / self.mass))
        # object views: every body except the robot, in declaration order
        self.object_indices = np.array(
            [i for i in range(n) if i != self.robot_index], np.int64)
        self.movable_object_mask = np.array(
            [self.classes[i] == MOVABLE for i in self.object_indices], bool)
        for a in ("classes", "kind", "sa", "sb", "mass", "inertia", "inv_mass",
                  "inv_inertia", "support_mu", "gyration", "object_indices",
                  "movable_object_mask"):
            getattr(self, a).setflags(write=False)

    @property
    def n_bodies(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    def class_of(self, i: int) -> str:
        return _CLASS_NAMES[int(self.classes[i])]


@dataclass
class WorldState:
    """Dynamic part of the world: all poses and velocities plus clock time."""

    model: WorldModel
    poses: np.ndarray  # (N, 3)
    velocities: np.ndarray  # (N, 3)
    time: float = 0.0

    @property
    def robot_pose(self) -> np.ndarray:
        return self.poses[self.model.robot_index]

    @property
    def robot_velocity(self) -> np.ndarray:
        return self.velocities[self.model.robot_index]

    def object_poses(self) -> np.ndarray:
        return self.poses[self.model.object_indices]

    def copy(self) -> "WorldState":
        return WorldState(self.model, self.poses.copy(), self.velocities.copy(), self.time)

    def with_object_poses(self, object_poses: np.ndarray) -> "WorldState":
        out = self.copy()
        out.poses[self.model.object_indices] = object_poses
        return out

    def kinetic_energy(self) -> float:
        m = self.model
        lin = 0.5 * m.mass * (self.velocities[:, 0] ** 2 + self.velocities[:, 1] ** 2)
        rot = 0.5 * m.inertia * self.velocities[:, 2] ** 2
        live = m.classes != FIXED
        return float(np.sum(lin[live]) + np.sum(rot[live]))

    def linear_momentum(self) -> np.ndarray:
        m = self.model
        live = m.classes != FIXED
        return (m.mass[live, None] * self.velocities[live, :2]).sum(axis=0)


def make_world(bodies: list[Body], dt: float = 0.005, gravity: float = 9.81,
               solver_iterations: int = 10) -> WorldState:
    model = WorldModel(bodies, dt=dt, gravity=gravity,
                       solver_iterations=solver_iterations)
    poses = np.array([b.pose for b in bodies], float)
    vels = np.array([b.velocity for b in bodies], float)
    return WorldState(model, poses, vels)


@dataclass
class PropagationTrace:
    """Per-step record of one propagation, consumed by the validity checker."""

    states_pose: np.ndarray  # (steps + 1, N, 3), row 0 = start
    states_vel: np.ndarray
    peak_speed: np.ndarray  # (N,) peak linear speed over the propagation
    contact_any: np.ndarray  # (N, N) bool, true if the pair ever touched
    duration: float
    n_steps: int

    def contacted(self, i: int, j: int) -> bool:
        return bool(self.contact_any[i, j])


def duration_steps(duration: float, dt: float) -> int:
    """Number of timesteps for a duration that must be a multiple of dt."""
    steps = int(round(duration / dt))
    if steps < 1 or abs(steps * dt - duration) > 1e-9:
        raise ValueError(
            f"duration {duration} is not a positive multiple of dt={dt}")
    return steps


def propagate_traced(world: WorldState, control: Control,
                     params: ContactParams,
                     disturbance: Disturbance = ZERO_DISTURBANCE
                     ) -> tuple[WorldState, PropagationTrace]:
    """Propagate and return both the final state and the full trace."""
    m = world.model
    steps = duration_steps(control.duration, m.dt)
    fx = control.wrench[0] + disturbance.wrench[0]
    fy = control.wrench[1] + disturbance.wrench[1]
    tau = control.wrench[2] + disturbance.wrench[2]

    pose = world.poses.copy()
    vel = world.velocities.copy()
    states_pose = np.empty((steps + 1, m.n_bodies, 3))
    states_vel = np.empty((steps + 1, m.n_bodies, 3))
    peak_speed = np.zeros(m.n_bodies)
    contact_any = np.zeros((m.n_bodies, m.n_bodies), np.int8)

    propagations.count += 1
    propagations.sim_time += steps * m.dt
    fail = _engine.propagate_steps(
        pose, vel, m.inv_mass, m.inv_inertia, m.kind, m.sa, m.sb,
        m.support_mu, m.gyration, m.robot_index,
        float(fx), float(fy), float(tau), steps, m.dt, m.gravity,
        params.friction, params.softness, params.correction,
        m.solver_iterations,
        states_pose, states_vel, peak_speed, contact_any)
    if fail >= 0:
        raise PropagationError(fail)

    out = WorldState(m, pose, vel, world.time + steps * m.dt)
    trace = PropagationTrace(states_pose, states_vel, peak_speed,
                             contact_any.astype(bool), steps * m.dt, steps)
    return out, trace


def propagate(world: WorldState, control: Control,
              params: ContactParams) -> WorldState:
    """Deterministic transition: apply the control wrench for its duration."""
    out, _ = propagate_traced(world, control, params)
    return out


def propagate_noisy(world: WorldState, control: Control,
                    disturbance: Disturbance,
                    params: ContactParams) -> WorldState:
    """Stochastic transition: nominal control plus a disturbance wrench.

    Deterministic given its inputs; all randomness is sampled by the caller.
    """
    out, _ = propagate_traced(world, control, params, disturbance)
    return out


def contact_depths(world: WorldState) -> list[tuple[int, int, float]]:
    """Current interpenetrations as (body_i, body_j, depth) triples."""
    m = world.model
    cap = max(m.n_bodies * (m.n_bodies - 1), 2)
    con_a = np.empty(cap, np.int64)
    con_b = np.empty(cap, np.int64)
    con_px = np.empty(cap)
    con_py = np.empty(cap)
    con_nx = np.empty(cap)
    con_ny = np.empty(cap)
    con_depth = np.empty(cap)
    n_c = _engine._detect(world.poses, m.inv_mass, m.kind, m.sa, m.sb,
                          con_a, con_b, con_px, con_py, con_nx, con_ny, con_depth)
    return [(int(con_a[k]), int(con_b[k]), float(con_depth[k])) for k in range(n_c)]


@dataclass(frozen=True)
class ContactImpulse:
    body_a: str
    body_b: str
    point: tuple[float, float]
    normal: tuple[float, float]
    normal_impulse: float
    tangent_impulse: float


def solve_contacts(world: WorldState, params: ContactParams) -> list[ContactImpulse]:
    """Resolve the current contact manifold once and report the impulses.

    Does not mutate the world; mainly a diagnostic/testing surface for the
    solver that propagate runs internally each step.
    """
    m = world.model
    cap = max(m.n_bodies * (m.n_bodies - 1), 2)
    con_a = np.empty(cap, np.int64)
    con_b = np.empty(cap, np.int64)
    con_px = np.empty(cap)
    con_py = np.empty(cap)
    con_nx = np.empty(cap)
    con_ny = np.empty(cap)
    con_depth = np.empty(cap)
    pn = np.zeros(cap)
    pt = np.zeros(cap)
    vel = world.velocities.copy()
    n_c = _engine.solve_contacts_once(
        world.poses, vel, m.inv_mass, m.inv_inertia, m.kind, m.sa, m.sb,
        params.friction, params.softness, m.solver_iterations,
        con_a, con_b, con_px, con_py, con_nx, con_ny, con_depth, pn, pt)
    return [
        ContactImpulse(
            m.names[con_a[k]], m.names[con_b[k]],
            (con_px[k], con_py[k]), (con_nx[k], con_ny[k]),
            float(pn[k]), float(pt[k]))
        for k in range(n_c)
    ]
