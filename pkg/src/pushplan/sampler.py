"""Candidate motion sampling with particle-based robustness evaluation.

From a selected tree motion, k candidate controls are applied from one
randomly chosen intermediate state. Candidates whose nominal propagation
violates validity are discarded outright. Each survivor is re-executed
n_p times under sampled object poses, contact parameters and control
noise; the fraction of particles passing the validity check and the
fraction passing the displacement check multiply into the candidate's
belief. The highest-belief candidate is normally returned, a random
survivor with a small bias probability.

Substream use is keyed by (candidate index, particle index), so results
do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import physics
from .kpiece import Motion
from .physics import Control, ContactParams, PropagationError, WorldState
from .rng import RngStream
from .uncertainty import (Belief, NoiseConfig, sample_contact_params,
                          sample_control_disturbance, sample_object_pose)
from .world import (ControlBounds, ValidityConstraints, interaction_evaluator,
                    validity_check)


@dataclass
class ParticleRecord:
    """Per-object particle poses of an accepted motion, for belief updates."""

    start_poses: dict[int, np.ndarray]  # body index -> (n_p, 3)
    final_poses: dict[int, np.ndarray]


@dataclass
class CandidateEvaluation:
    motion: Motion
    p_state: float
    p_int: float
    belief: float
    particles: ParticleRecord | None


def compute_belief(v_state: int, v_int: int, n_p: int) -> tuple[float, float, float]:
    """Fractions of passing particles and their product."""
    p_state = v_state / n_p
    p_int = v_int / n_p
    return p_state, p_int, p_state * p_int


def sample_candidates(source: Motion, k: int, bounds: ControlBounds,
                      duration_bounds: tuple[float, float], dt: float,
                      rng: RngStream) -> tuple[int, WorldState, list[Control]]:
    """Sample one shared start state and k uniform controls/durations.

    Durations land on integer multiples of dt inside the bounds. Returns
    the chosen row index into the source motion's states, the start world,
    and the controls.
    """
    if k < 1:
        raise ValueError("need at least one candidate")
    lo, hi = duration_bounds
    smin = max(1, math.ceil(lo / dt - 1e-9))
    smax = max(smin, math.floor(hi / dt + 1e-9))
    start_step = int(rng.gen.integers(source.n_states))
    start = source.state_at(start_step)
    controls = []
    for _ in range(k):
        fx = rng.gen.uniform(-bounds.fx, bounds.fx)
        fy = rng.gen.uniform(-bounds.fy, bounds.fy)
        tau = rng.gen.uniform(-bounds.torque, bounds.torque)
        steps = int(rng.gen.integers(smin, smax + 1))
        controls.append(Control((fx, fy, tau), steps * dt))
    return start_step, start, controls


def evaluate_particles(candidate: Motion, n_p: int,
                       beliefs: dict[int, Belief], noise: NoiseConfig,
                       constraints: ValidityConstraints, d_disp: float,
                       nominal_params: ContactParams,
                       rng: RngStream) -> CandidateEvaluation:
    """Estimate a candidate's robustness from n_p noisy re-executions.

    The candidate's nominal propagation must already have passed the
    validity check. Object start poses come from the current beliefs; the
    robot starts from the nominal tree state. When a particle's draws all
    collapse to the nominal values (zero noise configured), the nominal
    result is reused instead of re-propagating.
    """
    if n_p < 1:
        raise ValueError("particle count must be >= 1")
    world0 = candidate.state_at(0)
    model = world0.model
    movable_cols = model.object_indices[model.movable_object_mask]
    tracked = sorted(beliefs)
    starts = {i: np.empty((n_p, 3)) for i in tracked}
    finals = {i: np.empty((n_p, 3)) for i in tracked}

    nominal_final = candidate.final_state
    dn = nominal_final.poses[movable_cols, :2] - world0.poses[movable_cols, :2]
    nominal_disp = np.hypot(dn[:, 0], dn[:, 1])

    v_state = 0
    v_int = 0
    for j in range(n_p):
        sub = rng.split(j)
        start = world0.copy()
        nominal_draw = True
        for i in tracked:
            pose = sample_object_pose(beliefs[i], sub)
            if not np.array_equal(pose, world0.poses[i]):
                nominal_draw = False
            start.poses[i] = pose
            starts[i][j] = pose
        params = sample_contact_params(noise, sub)
        eps = sample_control_disturbance(noise, sub)
        nominal_draw = (nominal_draw and params == nominal_params
                        and eps.wrench == (0.0, 0.0, 0.0))
        if nominal_draw:
            # bit-identical to the nominal propagation; reuse its outcome
            final = nominal_final
            valid = True  # gated: nominal already passed validity
            disp = nominal_disp
        else:
            try:
                final, trace = physics.propagate_traced(
                    start, candidate.control, params, eps)
            except PropagationError:
                for i in tracked:
                    finals[i][j] = starts[i][j]
                continue  # diverged particle counts as failing both checks
            valid = validity_check(final, constraints, trace)
            d = final.poses[movable_cols, :2] - start.poses[movable_cols, :2]
            disp = np.hypot(d[:, 0], d[:, 1])
        if valid:
            v_state += 1
        if interaction_evaluator(disp, d_disp):
            v_int += 1
        for i in tracked:
            finals[i][j] = final.poses[i]

    p_state, p_int, belief = compute_belief(v_state, v_int, n_p)
    candidate.belief = belief
    record = ParticleRecord(starts, finals)
    candidate.particles = record
    return CandidateEvaluation(candidate, p_state, p_int, belief, record)


def motion_sampler(source: Motion, k: int, n_p: int, d_disp: float,
                   constraints: ValidityConstraints,
                   beliefs: dict[int, Belief], noise: NoiseConfig,
                   bias: float, bounds: ControlBounds,
                   duration_bounds: tuple[float, float],
                   nominal_params: ContactParams,
                   rng: RngStream) -> Motion | None:
    """Sample k candidates, keep the nominally valid ones, pick by belief.

    Returns None when every candidate fails its nominal validity check.
    Candidates that fail nominally are never particle-evaluated. With
    probability bias, a uniformly random survivor is returned instead of
    the belief argmax (exact ties break uniformly).
    """
    dt = source.final_state.model.dt
    start_step, start, controls = sample_candidates(
        source, k, bounds, duration_bounds, dt, rng.split(0))

    survivors: list[CandidateEvaluation] = []
    for i, control in enumerate(controls):
        try:
            final, trace = physics.propagate_traced(start, control, nominal_params)
        except PropagationError:
            continue
        if not validity_check(final, constraints, trace):
            continue
        candidate = Motion(
            final_state=final,
            control=control,
            duration=control.duration,
            belief=1.0,
            parent=source,
            start_step=start_step,
            states_pose=trace.states_pose,
            states_vel=trace.states_vel,
        )
        survivors.append(
            evaluate_particles(candidate, n_p, beliefs, noise, constraints,
                               d_disp, nominal_params, rng.split(1, i)))
    if not survivors:
        return None

    pick = rng.split(2)
    if pick.gen.random() < bias:
        chosen = survivors[int(pick.gen.integers(len(survivors)))]
    else:
        best = max(s.belief for s in survivors)
        ties = [s for s in survivors if s.belief == best]
        chosen = ties[0] if len(ties) == 1 else ties[int(pick.gen.integers(len(ties)))]
    return chosen.motion
