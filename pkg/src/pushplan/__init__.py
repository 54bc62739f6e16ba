"""Planar physics-based kinodynamic planning workbench.

A force-controlled robot body plans pushing motions through clutter on a
tabletop, under uncertainty in object poses, contact parameters and
controls. The probabilistic planner scores candidate motions by particle
rollouts and biases its tree exploration toward robust cells; a plain
exploration baseline serves as the comparison planner.
"""

from .physics import (Body, Box, ContactImpulse, ContactParams, Control,
                      Disk, Disturbance, PropagationError, PropagationTrace,
                      WorldModel, WorldState, contact_depths, make_world,
                      propagate, propagate_noisy, propagate_traced,
                      solve_contacts)
from .world import (ControlBounds, Rect, ValidityConstraints,
                    displacement_of_objects, initial_trace,
                    interaction_evaluator, validity_check)
from .uncertainty import (GaussianBelief, MixtureBelief, NoiseConfig,
                          SamplingError, fit_gmm_em, sample_contact_params,
                          sample_control_disturbance, sample_initial_world,
                          sample_object_pose, update_pose_uncertainty)
from .kpiece import (Cell, Grid, Motion, importance, make_root, project,
                     select_motion_in_cell, update_score)
from .sampler import (CandidateEvaluation, ParticleRecord, compute_belief,
                      evaluate_particles, motion_sampler, sample_candidates)
from .planner import (GoalRegion, Plan, PlanResult, PlannerParams,
                      PlannerStats, Query, extract_path, plan, replay_plan)
from .rng import RngStream

__version__ = "0.1.0"
