"""Tree and grid data structures for interior/exterior cell exploration.

The robot's (x, y) position projects each tree motion into a 2-D grid.
Cells carry the usual exploration statistics (coverage, selection count,
score, neighbor count) plus a normalized belief derived from the beliefs
of the motions they hold, which biases cell importance toward regions the
particle evaluation considers robust.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .physics import Control, WorldState
from .rng import RngStream

# Exploration constants. The selection probability for exterior cells is
# standard practice; the score factors and half-normal scale are declared
# defaults kept in one place so experiments can reference them.
EXTERIOR_SELECT_PROB = 0.75
SCORE_PENALTY = 0.9
SCORE_REWARD = 1.0 / 0.9
SCORE_MIN = 1e-3
SCORE_MAX = 1e3
COVERAGE_RATE_THRESHOLD = 1.0 / 0.1  # states of new-cell coverage per second
HALF_NORMAL_SCALE_DIV = 3.0


@dataclass
class Motion:
    """One tree edge: a control held for a duration from a start state.

    states_pose/states_vel hold every intermediate state including the
    start at row 0, so children can branch mid-motion and goal entry can
    be detected at the earliest step.
    """

    final_state: WorldState
    control: Optional[Control]  # None only for the root
    duration: float
    belief: float
    parent: Optional["Motion"]
    start_step: int  # row of parent's states this motion started from
    states_pose: np.ndarray  # (steps + 1, N, 3)
    states_vel: np.ndarray
    particles: object = None  # ParticleRecord on accepted probabilistic motions

    def __post_init__(self):
        if not 0.0 <= self.belief <= 1.0:
            raise ValueError(f"motion belief {self.belief} outside [0, 1]")
        if self.parent is not None and self.duration <= 0.0:
            raise ValueError("only the root motion may have zero duration")

    @property
    def n_states(self) -> int:
        return self.states_pose.shape[0]

    def state_at(self, i: int) -> WorldState:
        m = self.final_state.model
        t = self.final_state.time - self.duration + i * m.dt
        return WorldState(m, self.states_pose[i].copy(),
                          self.states_vel[i].copy(), t)

    def chain_to_root(self) -> list["Motion"]:
        chain = [self]
        seen = {id(self)}
        while chain[-1].parent is not None:
            nxt = chain[-1].parent
            if id(nxt) in seen:
                raise RuntimeError("cycle in motion parent links")
            seen.add(id(nxt))
            chain.append(nxt)
        chain.reverse()
        return chain


def make_root(world: WorldState, belief: float) -> Motion:
    return Motion(
        final_state=world.copy(),
        control=None,
        duration=0.0,
        belief=belief,
        parent=None,
        start_step=0,
        states_pose=world.poses[None, :, :].copy(),
        states_vel=world.velocities[None, :, :].copy(),
    )


@dataclass
class Cell:
    coord: tuple[int, int]
    motions: list[Motion] = field(default_factory=list)
    coverage: int = 0  # states held by motions of this cell
    neighbors: int = 0  # instantiated 4-neighborhood count
    created_iteration: int = 1
    selections: int = 1  # creation counts as the first selection
    score: float = 1.0
    belief: float = 0.0  # normalized across the grid
    belief_sum: float = 0.0

    @property
    def is_interior(self) -> bool:
        return self.neighbors == 4

    def mean_belief(self) -> float:
        return self.belief_sum / len(self.motions) if self.motions else 0.0


def project(world: WorldState) -> tuple[float, float]:
    """Project a full world state to the robot's position."""
    p = world.robot_pose
    return float(p[0]), float(p[1])


def importance(cell: Cell, f: float) -> float:
    """Cell priority; the (1 + f * belief) factor drops out when f = 0."""
    return ((1.0 + f * cell.belief) * math.log(1.0 + cell.created_iteration)
            * cell.score) / (cell.selections * (1.0 + cell.neighbors) * cell.coverage)


class Grid:
    """Single-owner container for cells and the motion tree."""

    _NEIGHBOR_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))

    def __init__(self, cell_size: float, use_belief: bool = True):
        if cell_size <= 0.0:
            raise ValueError("cell size must be > 0")
        self.cell_size = cell_size
        self.use_belief = use_belief
        self.cells: dict[tuple[int, int], Cell] = {}
        self.iteration = 1
        self.total_coverage = 0
        self.total_motions = 0

    def coord_of(self, world: WorldState) -> tuple[int, int]:
        x, y = project(world)
        return (math.floor(x / self.cell_size), math.floor(y / self.cell_size))

    def bias_factor(self) -> float:
        """Belief-bias strength: the live cell count, or 0 when disabled."""
        return float(len(self.cells)) if self.use_belief else 0.0

    def add_motion(self, motion: Motion) -> tuple[Cell, bool]:
        """Insert a motion into the cell of its final state.

        Returns the cell and whether it was newly instantiated. Cell
        beliefs are renormalized across the whole grid after insertion.
        """
        coord = self.coord_of(motion.final_state)
        cell = self.cells.get(coord)
        created = cell is None
        if created:
            cell = Cell(coord=coord, created_iteration=self.iteration)
            for dx, dy in self._NEIGHBOR_OFFSETS:
                nb = self.cells.get((coord[0] + dx, coord[1] + dy))
                if nb is not None:
                    nb.neighbors += 1
                    cell.neighbors += 1
            self.cells[coord] = cell
        cell.motions.append(motion)
        cell.coverage += motion.n_states
        cell.belief_sum += motion.belief
        self.total_coverage += motion.n_states
        self.total_motions += 1
        self._renormalize_beliefs()
        return cell, created

    def _renormalize_beliefs(self):
        means = [c.mean_belief() for c in self.cells.values()]
        total = float(sum(means))
        if total > 0.0:
            for c, m in zip(self.cells.values(), means):
                c.belief = m / total
        else:
            u = 1.0 / len(self.cells)
            for c in self.cells.values():
                c.belief = u

    def select_cell(self, rng: RngStream) -> Cell:
        """Pick the max-importance cell, preferring the exterior set.

        Ties break toward the earliest-created cell, then the smallest
        coordinate. Increments the winner's selection count.
        """
        if not self.cells:
            raise RuntimeError("cannot select from an empty grid")
        exterior = [c for c in self.cells.values() if not c.is_interior]
        interior = [c for c in self.cells.values() if c.is_interior]
        if rng.gen.random() < EXTERIOR_SELECT_PROB:
            pool = exterior or interior
        else:
            pool = interior or exterior
        f = self.bias_factor()
        best = min(pool, key=lambda c: (-importance(c, f), c.created_iteration, c.coord))
        best.selections += 1
        return best

    def check_invariants(self):
        """Tree/grid consistency; raises AssertionError on violation."""
        for cell in self.cells.values():
            assert cell.coverage >= 1
            assert cell.selections >= 1
            assert cell.motions, f"cell {cell.coord} has no motions"
            for m in cell.motions:
                assert self.coord_of(m.final_state) == cell.coord
                m.chain_to_root()  # raises on cycles
        if any(m.belief > 0.0 for c in self.cells.values() for m in c.motions):
            assert abs(sum(c.belief for c in self.cells.values()) - 1.0) <= 1e-9


def select_motion_in_cell(cell: Cell, eps_rand: float, rng: RngStream) -> Motion:
    """Pick a motion from a cell, usually the highest-belief one.

    With probability eps_rand the choice falls back to the standard
    half-normal over newest-first indices, which keeps less certain
    regions explorable.
    """
    motions = cell.motions
    if not motions:
        raise RuntimeError(f"cell {cell.coord} has no motions")
    count = len(motions)
    if rng.gen.random() >= eps_rand:
        best = max(m.belief for m in motions)
        ties = [m for m in motions if m.belief == best]
        if len(ties) == 1:
            return ties[0]
        return ties[int(rng.gen.integers(len(ties)))]
    z = rng.gen.standard_normal()
    i = int(abs(z) * count / HALF_NORMAL_SCALE_DIV)
    if i >= count:
        i = count - 1
    return motions[count - 1 - i]  # motions list is newest-last


def update_score(cell: Cell, coverage_gain: int, elapsed: float) -> float:
    """Multiplicative exploration-progress update after an expansion.

    coverage_gain counts states contributed to newly instantiated cells;
    elapsed is the simulated time spent propagating for the expansion.
    Expansions below COVERAGE_RATE_THRESHOLD shrink the score, others grow
    it; the score stays clamped to [SCORE_MIN, SCORE_MAX].
    """
    rate = coverage_gain / max(elapsed, 1e-9)
    factor = SCORE_REWARD if rate >= COVERAGE_RATE_THRESHOLD else SCORE_PENALTY
    cell.score = min(max(cell.score * factor, SCORE_MIN), SCORE_MAX)
    return cell.score
