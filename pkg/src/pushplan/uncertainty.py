"""Stochastic models: initial pose noise, control disturbance, contact
parameter sampling, and the mixture-model update of object pose uncertainty
after interactions.

All draws go through an explicit RngStream, so every operation here is a
deterministic function of (inputs, stream state). Angles are unwrapped to
the branch nearest the circular mean before any Gaussian fitting, since
plain moments are meaningless across the +/-pi seam.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .physics import ContactParams, Disturbance, WorldState, MOVABLE
from .rng import RngStream

COV_FLOOR = 1.0e-8
EM_TOL = 1.0e-6
EM_MAX_ITER = 200
DISPLACED_EPS = 1.0e-4
_LOG2PI = math.log(2.0 * math.pi)


class SamplingError(RuntimeError):
    """Rejection sampling of an initial world ran out of attempts."""


def _check_cov(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.asarray(cov, float)
    if cov.shape != (3, 3):
        raise ValueError(f"{what}: covariance must be 3x3")
    if np.max(np.abs(cov - cov.T)) > 1e-12:
        raise ValueError(f"{what}: covariance must be symmetric")
    if np.min(np.linalg.eigvalsh(cov)) < -1e-12:
        raise ValueError(f"{what}: covariance must be PSD")
    return cov


def _cov_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root; exact zero for a zero covariance."""
    w, v = np.linalg.eigh(cov)
    w = np.clip(w, 0.0, None)
    return v * np.sqrt(w) @ v.T


@dataclass(frozen=True)
class GaussianBelief:
    """Single Gaussian over an object pose (x, y, theta)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, float))
        object.__setattr__(self, "cov", _check_cov(self.cov, "GaussianBelief"))
        object.__setattr__(self, "_sqrt", _cov_sqrt(self.cov))

    def sample(self, rng: RngStream) -> np.ndarray:
        return self.mean + self._sqrt @ rng.gen.standard_normal(3)


@dataclass(frozen=True)
class MixtureBelief:
    """Gaussian mixture over an object pose; weights sum to one."""

    weights: np.ndarray
    means: np.ndarray  # (n, 3)
    covs: np.ndarray  # (n, 3, 3)
    loglik_path: tuple[float, ...] = ()  # EM diagnostic, when fitted

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if w.ndim != 1 or np.any(w < 0.0):
            raise ValueError("mixture weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must sum to 1, got {w.sum()}")
        means = np.asarray(self.means, float)
        covs = np.asarray(self.covs, float)
        if means.shape != (len(w), 3) or covs.shape != (len(w), 3, 3):
            raise ValueError("mixture component shapes are inconsistent")
        for j in range(len(w)):
            _check_cov(covs[j], f"mixture component {j}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "_sqrts", np.stack([_cov_sqrt(c) for c in covs]))

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def sample(self, rng: RngStream) -> np.ndarray:
        u = rng.gen.random()
        j = int(np.searchsorted(np.cumsum(self.weights), u))
        j = min(j, self.n_components - 1)
        return self.means[j] + self._sqrts[j] @ rng.gen.standard_normal(3)


Belief = GaussianBelief | MixtureBelief


@dataclass(frozen=True)
class NoiseConfig:
    """Variances for control disturbance and contact-parameter sampling."""

    control_cov: tuple[float, float, float]  # diagonal, wrench units squared
    contact_nominal: ContactParams
    friction_var: float = 0.0
    softness_var: float = 0.0
    correction_var: float = 0.0

    def __post_init__(self):
        if any(v < 0.0 for v in self.control_cov):
            raise ValueError("control covariance entries must be >= 0")
        if min(self.friction_var, self.softness_var, self.correction_var) < 0.0:
            raise ValueError("contact parameter variances must be >= 0")

    def is_zero(self) -> bool:
        return (max(self.control_cov) == 0.0 and self.friction_var == 0.0
                and self.softness_var == 0.0 and self.correction_var == 0.0)


def sample_control_disturbance(cfg: NoiseConfig, rng: RngStream) -> Disturbance:
    """Zero-mean Gaussian wrench noise."""
    sd = np.sqrt(np.asarray(cfg.control_cov, float))
    eps = sd * rng.gen.standard_normal(3)
    return Disturbance((float(eps[0]), float(eps[1]), float(eps[2])))


def sample_contact_params(cfg: NoiseConfig, rng: RngStream) -> ContactParams:
    """Gaussian draw around the nominal contact triple, clamped to valid ranges."""
    nom = cfg.contact_nominal
    z = rng.gen.standard_normal(3)
    mu = nom.friction + math.sqrt(cfg.friction_var) * z[0]
    c = nom.softness + math.sqrt(cfg.softness_var) * z[1]
    e = nom.correction + math.sqrt(cfg.correction_var) * z[2]
    return ContactParams(friction=max(mu, 0.0), softness=max(c, 0.0),
                         correction=min(max(e, 0.0), 1.0))


def sample_object_pose(belief: Belief, rng: RngStream) -> np.ndarray:
    """One pose draw from a Gaussian or mixture belief."""
    return belief.sample(rng)


def _max_overlap_fraction(world: WorldState) -> float:
    """Deepest penetration as a fraction of the smaller interpenetrating body."""
    from .physics import contact_depths

    worst = 0.0
    for i, j, depth in contact_depths(world):
        ref = min(world.model.shapes[i].min_extent(), world.model.shapes[j].min_extent())
        if ref > 0.0:
            worst = max(worst, depth / ref)
    return worst


def sample_initial_world(nominal: WorldState, beliefs: dict[int, Belief],
                         rng: RngStream, max_attempts: int = 100) -> WorldState:
    """Perturb movable-object poses by their beliefs; velocities untouched.

    Draws causing interpenetration deeper than 10% of the smaller body are
    rejected and resampled, up to max_attempts.
    """
    for i in beliefs:
        if world_class(nominal, i) != "movable":
            raise ValueError(f"belief given for non-movable body index {i}")
    for attempt in range(max_attempts):
        sub = rng.split(attempt)
        out = nominal.copy()
        for i in sorted(beliefs):
            pose = sample_object_pose(beliefs[i], sub)
            out.poses[i, 0] = pose[0]
            out.poses[i, 1] = pose[1]
            out.poses[i, 2] = wrap_to_pi(pose[2])
        if _max_overlap_fraction(out) <= 0.10:
            return out
    raise SamplingError(
        f"no interpenetration-free initial world in {max_attempts} attempts")


def world_class(world: WorldState, i: int) -> str:
    return world.model.class_of(i)


def wrap_to_pi(theta: float) -> float:
    if -math.pi < theta <= math.pi:
        return theta
    r = theta % (2.0 * math.pi)
    if r > math.pi:
        r -= 2.0 * math.pi
    return r


def unwrap_angles(theta: np.ndarray) -> np.ndarray:
    """Map angles onto the continuous branch nearest their circular mean."""
    mean = math.atan2(np.sin(theta).mean(), np.cos(theta).mean())
    return mean + np.arctan2(np.sin(theta - mean), np.cos(theta - mean))


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    diff = (x - mean) @ np.linalg.inv(L).T
    quad = np.sum(diff * diff, axis=1)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (3 * _LOG2PI + logdet + quad)


def _seed_means(x: np.ndarray, n: int, rng: RngStream) -> np.ndarray:
    """k-means++-style seeding: spread initial means over the samples."""
    idx = [int(rng.gen.integers(len(x)))]
    for _ in range(1, n):
        d2 = np.min(
            [np.sum((x - x[i]) ** 2, axis=1) for i in idx], axis=0)
        total = d2.sum()
        if total <= 0.0:
            idx.append(int(rng.gen.integers(len(x))))
            continue
        u = rng.gen.random() * total
        idx.append(int(np.searchsorted(np.cumsum(d2), u)))
    return x[np.array(idx)].copy()


def fit_gmm_em(samples: np.ndarray, n: int, rng: RngStream) -> MixtureBelief:
    """Fit a Gaussian mixture to pose samples by expectation-maximization.

    Angles are unwrapped before fitting. Covariances are floored by
    COV_FLOOR * I so components never go singular; iteration stops when the
    log-likelihood improves by less than EM_TOL or after EM_MAX_ITER rounds.
    The log-likelihood path is asserted non-decreasing and returned on the
    fitted belief for inspection.
    """
    x = np.asarray(samples, float)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("samples must be (count, 3) poses")
    if n < 1 or len(x) < n:
        raise ValueError(f"need at least n={n} samples, got {len(x)}")
    x = x.copy()
    x[:, 2] = unwrap_angles(x[:, 2])

    means = _seed_means(x, n, rng)
    base_cov = np.cov(x.T, bias=True) if len(x) > 1 else np.zeros((3, 3))
    base_cov = base_cov + COV_FLOOR * np.eye(3)
    covs = np.repeat(base_cov[None, :, :], n, axis=0)
    weights = np.full(n, 1.0 / n)

    prev_ll = -np.inf
    ll_path: list[float] = []
    for _ in range(EM_MAX_ITER):
        # E-step
        logp = np.empty((len(x), n))
        for j in range(n):
            logp[:, j] = math.log(weights[j]) + _log_gauss(x, means[j], covs[j])
        mx = logp.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(logp - mx).sum(axis=1))
        resp = np.exp(logp - lse[:, None])
        assert np.max(np.abs(resp.sum(axis=1) - 1.0)) <= 1e-9
        ll = float(lse.sum())
        assert ll >= prev_ll - 1e-9, "EM log-likelihood decreased"
        ll_path.append(ll)
        if ll - prev_ll < EM_TOL:
            break
        prev_ll = ll
        # M-step
        mass = resp.sum(axis=0)
        for j in range(n):
            if mass[j] <= 0.0:
                # component starved of responsibility: keep its parameters
                continue
            means[j] = resp[:, j] @ x / mass[j]
            d = x - means[j]
            covs[j] = (resp[:, j] * d.T) @ d / mass[j] + COV_FLOOR * np.eye(3)
        weights = np.maximum(mass, 1e-300) / np.maximum(mass, 1e-300).sum()

    order = np.argsort(-weights, kind="stable")
    return MixtureBelief(weights[order] / weights[order].sum(),
                         means[order], covs[order],
                         loglik_path=tuple(ll_path))


def distinct_pose_count(poses: np.ndarray, tol: float = 1e-9) -> int:
    rounded = np.round(np.asarray(poses, float) / tol) * tol
    return len(np.unique(rounded, axis=0))


def update_pose_uncertainty(current: dict[int, Belief],
                            start_poses: dict[int, np.ndarray],
                            final_poses: dict[int, np.ndarray],
                            n_components: int,
                            rng: RngStream) -> dict[int, Belief]:
    """Refit beliefs of objects displaced by the accepted motion's particles.

    start_poses/final_poses map body index to (n_particles, 3) arrays. An
    object counts as displaced when any particle moved its center by more
    than DISPLACED_EPS. Undisturbed objects keep their belief object
    untouched. Fewer than two particle outcomes cannot seed a mixture, so
    the prior is kept and a warning emitted.
    """
    out = dict(current)
    for i in sorted(current):
        if i not in final_poses:
            continue
        fin = np.asarray(final_poses[i], float)
        sta = np.asarray(start_poses[i], float)
        disp = np.hypot(fin[:, 0] - sta[:, 0], fin[:, 1] - sta[:, 1])
        if not np.any(disp > DISPLACED_EPS):
            continue
        if len(fin) < 2:
            warnings.warn(
                f"object {i} displaced but only {len(fin)} particle outcome(s); "
                "keeping prior belief", stacklevel=2)
            continue
        n = min(n_components, distinct_pose_count(fin))
        out[i] = fit_gmm_em(fin, max(n, 1), rng.split(i))
    return out
