"""Main planning loop: belief-guided cell exploration to a goal region.

Probabilistic mode runs the full pipeline: select a cell by belief-biased
importance, select a motion by belief, sample k candidates, evaluate
particles, add the chosen motion, and refit the pose beliefs of displaced
objects. Baseline mode is plain exploration with the belief machinery off
(one candidate, no particles, half-normal motion selection, unbiased
importance); it is the comparison planner for the benchmarks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import physics
from .kpiece import Grid, Motion, make_root, select_motion_in_cell, update_score
from .physics import Control, ContactParams, PropagationError, WorldState
from .rng import RngStream
from .sampler import motion_sampler, sample_candidates
from .uncertainty import Belief, NoiseConfig, update_pose_uncertainty, wrap_to_pi
from .world import ControlBounds, ValidityConstraints, initial_trace, validity_check

MODES = ("probabilistic", "baseline")


@dataclass(frozen=True)
class GoalRegion:
    """Disc over robot position with an optional heading tolerance."""

    x: float
    y: float
    radius: float
    theta: float | None = None
    theta_tol: float | None = None

    def contains(self, pose) -> bool:
        if math.hypot(pose[0] - self.x, pose[1] - self.y) > self.radius:
            return False
        if self.theta is None or self.theta_tol is None:
            return True
        return abs(wrap_to_pi(pose[2] - self.theta)) <= self.theta_tol


@dataclass(frozen=True)
class PlannerParams:
    candidates: int = 8  # k
    particles: int = 5  # n_p
    cell_size: float = 0.05  # meters, projection grid side
    mixture_components: int = 3
    bias: float = 0.1  # random-candidate fallback probability
    eps_rand: float = 0.1  # half-normal motion-selection probability
    duration_bounds: tuple[float, float] = (0.1, 0.4)

    def __post_init__(self):
        if self.candidates < 1 or self.particles < 0:
            raise ValueError("candidates must be >= 1 and particles >= 0")
        if not (0.0 <= self.bias <= 1.0 and 0.0 <= self.eps_rand <= 1.0):
            raise ValueError("bias and eps_rand must be probabilities")


@dataclass
class Query:
    world: WorldState
    beliefs: dict[int, Belief]
    goal: GoalRegion
    constraints: ValidityConstraints
    noise: NoiseConfig
    contact_params: ContactParams
    control_bounds: ControlBounds
    t_max: float
    mode: str = "probabilistic"
    params: PlannerParams = field(default_factory=PlannerParams)
    max_iterations: int | None = None

    def __post_init__(self):
        if self.t_max <= 0.0:
            raise ValueError("t_max must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class PlannerStats:
    iterations: int = 0
    states_generated: int = 0
    cells_created: int = 0
    propagations: int = 0
    wall_time_s: float = 0.0


@dataclass
class Plan:
    controls: list[Control]
    beliefs: list[float]

    @property
    def total_duration(self) -> float:
        return sum(c.duration for c in self.controls)


@dataclass
class PlanResult:
    success: bool
    plan: Plan | None
    stats: PlannerStats
    reason: str = ""


def extract_path(goal_motion: Motion) -> Plan:
    """Controls from root to goal, trimmed to where each child branched.

    The zero-duration root contributes nothing. A motion whose child
    branched at its start state contributes nothing either.
    """
    chain = goal_motion.chain_to_root()
    dt = goal_motion.final_state.model.dt
    controls: list[Control] = []
    beliefs: list[float] = []
    for m, child in zip(chain, chain[1:]):
        if m.control is None:
            continue
        used = child.start_step
        if used > 0:
            controls.append(replace(m.control, duration=used * dt))
            beliefs.append(m.belief)
    last = chain[-1]
    if last.control is not None:
        controls.append(last.control)
        beliefs.append(last.belief)
    return Plan(controls, beliefs)


def replay_plan(plan: Plan, world: WorldState,
                params: ContactParams) -> WorldState:
    """Execute a plan open-loop under nominal dynamics."""
    for control in plan.controls:
        world = physics.propagate(world, control, params)
    return world


def _goal_entry_step(motion: Motion, goal: GoalRegion) -> int:
    """Earliest state index (>= 1) of the motion inside the goal, else -1."""
    ridx = motion.final_state.model.robot_index
    for i in range(1, motion.n_states):
        if goal.contains(motion.states_pose[i, ridx]):
            return i
    return -1


def _truncate(motion: Motion, step: int) -> Motion:
    """Cut a motion at an intermediate step (goal entry)."""
    if step >= motion.n_states - 1:
        return motion
    m = motion.final_state.model
    dur = step * m.dt
    final = WorldState(m, motion.states_pose[step].copy(),
                       motion.states_vel[step].copy(),
                       motion.final_state.time - motion.duration + dur)
    return Motion(
        final_state=final,
        control=replace(motion.control, duration=dur),
        duration=dur,
        belief=motion.belief,
        parent=motion.parent,
        start_step=motion.start_step,
        states_pose=motion.states_pose[:step + 1],
        states_vel=motion.states_vel[:step + 1],
    )


def _expand_baseline(source: Motion, query: Query, rng: RngStream) -> Motion | None:
    """One nominally propagated candidate, validity-gated, no particles."""
    dt = query.world.model.dt
    start_step, start, controls = sample_candidates(
        source, 1, query.control_bounds, query.params.duration_bounds, dt,
        rng.split(0))
    try:
        final, trace = physics.propagate_traced(
            start, controls[0], query.contact_params)
    except PropagationError:
        return None
    if not validity_check(final, query.constraints, trace):
        return None
    return Motion(
        final_state=final,
        control=controls[0],
        duration=controls[0].duration,
        belief=0.0,
        parent=source,
        start_step=start_step,
        states_pose=trace.states_pose,
        states_vel=trace.states_vel,
    )


def plan(query: Query, seed: int) -> PlanResult:
    """Run the planner until the goal region is reached or the budget ends.

    Bit-identical results for identical (query, seed): every random draw
    comes from substreams keyed by the iteration index.
    """
    t0 = time.perf_counter()
    world = query.world
    if not validity_check(world, query.constraints, initial_trace(world)):
        raise ValueError("initial world state violates the validity constraints")

    probabilistic = query.mode == "probabilistic"
    stats = PlannerStats()
    prop0 = physics.propagations.count

    def finish(success: bool, plan_: Plan | None, reason: str = "") -> PlanResult:
        stats.propagations = physics.propagations.count - prop0
        stats.wall_time_s = time.perf_counter() - t0
        return PlanResult(success, plan_, stats, reason)

    root = make_root(world, belief=1.0 if probabilistic else 0.0)
    if query.goal.contains(world.robot_pose):
        stats.states_generated = 1
        return finish(True, Plan([], []))

    grid = Grid(query.params.cell_size, use_belief=probabilistic)
    grid.add_motion(root)
    stats.states_generated = 1
    stats.cells_created = 1
    beliefs = dict(query.beliefs)
    master = RngStream(seed)
    eps_rand = query.params.eps_rand if probabilistic else 1.0

    it = 0
    while True:
        if time.perf_counter() - t0 >= query.t_max:
            return finish(False, None, "timeout")
        if query.max_iterations is not None and it >= query.max_iterations:
            return finish(False, None, "iteration limit")
        it += 1
        stats.iterations = it
        grid.iteration = it + 1  # root was added at iteration 1
        rs = master.split(it)

        cell = grid.select_cell(rs.split(0))
        source = select_motion_in_cell(cell, eps_rand, rs.split(1))

        sim0 = physics.propagations.sim_time
        if probabilistic:
            new = motion_sampler(
                source, query.params.candidates, query.params.particles,
                query.constraints.displacement_limit, query.constraints,
                beliefs, query.noise, query.params.bias, query.control_bounds,
                query.params.duration_bounds, query.contact_params,
                rs.split(2))
        else:
            new = _expand_baseline(source, query, rs.split(2))
        sim_elapsed = physics.propagations.sim_time - sim0

        gain = 0
        if new is not None:
            entry = _goal_entry_step(new, query.goal)
            if entry >= 0:
                return finish(True, extract_path(_truncate(new, entry)))
            _, created = grid.add_motion(new)
            stats.states_generated += new.n_states
            stats.cells_created = len(grid.cells)
            if created:
                gain = new.n_states
            if probabilistic and new.particles is not None:
                beliefs = update_pose_uncertainty(
                    beliefs, new.particles.start_poses, new.particles.final_poses,
                    query.params.mixture_components, rs.split(3))
                new.particles = None  # tree keeps states only, not particle logs
        update_score(cell, gain, sim_elapsed)
