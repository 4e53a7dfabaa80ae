"""Voxel-distribution scan matching with an analytic accuracy prediction.

Both scans are binned into a voxel grid fixed in the primary frame. For each
voxel holding enough points from both scans the residual between the primary
and (transformed) secondary point means is weighted by the inverse of the
summed mean covariances ``(S_p / n_p + S_s / n_s)^-1``. A Gauss-Newton solve
on the 6-vector ``(x, y, z, phi, theta, psi)`` follows, and the inverse of the
normal matrix at the final iterate is reported as the predicted error
covariance.

Two grid flavours share the solver: the shadow-filtered spherical grid and a
conventional cubic Cartesian grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Optional, Protocol, Union

import numpy as np

from .geometry import RigidTransform, euler_derivatives, rotation_from_euler
from .spherical_grid import ShadowGrid, WedgeGridConfig, build_shadow_filtered_grid

STATE_LABELS = ("x", "y", "z", "phi", "theta", "psi")


class MatchError(RuntimeError):
    """Base class for solver failures that reject a scan pair."""


class InsufficientPointsError(ValueError):
    pass


class InsufficientVoxelsError(MatchError):
    pass


class DivergenceError(MatchError):
    pass


class RankDeficiencyError(MatchError):
    pass


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class VoxelStats:
    count: int
    mean: np.ndarray
    covariance: np.ndarray


def voxel_stats(points) -> VoxelStats:
    """Mean and unbiased sample covariance of a point set.

    Raises:
        InsufficientPointsError: for fewer than two points.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if p.shape[0] < 2:
        raise InsufficientPointsError("voxel statistics need at least two points")
    mu = p.mean(axis=0)
    d = p - mu
    cov = d.T @ d / (p.shape[0] - 1)
    return VoxelStats(p.shape[0], mu, 0.5 * (cov + cov.T))


def grouped_stats(points: np.ndarray, slots: np.ndarray, n_voxels: int):
    """Counts, means and unbiased covariances of points grouped by voxel slot.

    Slots of -1 are ignored. Voxels with fewer than two points get a zero
    covariance.
    """
    keep = slots >= 0
    s = slots[keep]
    p = points[keep]
    counts = np.bincount(s, minlength=n_voxels).astype(float)
    safe = np.maximum(counts, 1.0)
    means = np.stack([np.bincount(s, p[:, a], n_voxels) for a in range(3)], axis=1) / safe[:, None]
    d = p - means[s]
    covs = np.empty((n_voxels, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            c = np.bincount(s, d[:, a] * d[:, b], n_voxels)
            covs[:, a, b] = c
            covs[:, b, a] = c
    covs /= np.maximum(counts - 1.0, 1.0)[:, None, None]
    return counts.astype(np.int64), means, covs


# ---------------------------------------------------------------- grids


class VoxelGrid(Protocol):
    def locate(self, points: np.ndarray) -> np.ndarray: ...

    def __len__(self) -> int: ...


@dataclass(frozen=True)
class CartesianGrid:
    """Cubic voxels of side ``edge`` anchored at ``offset``; only voxels occupied by the primary exist."""

    edge: float
    offset: np.ndarray
    keys: np.ndarray  # sorted primary voxel keys

    def __len__(self) -> int:
        return int(self.keys.size)

    def voxel_index(self, points) -> np.ndarray:
        return np.floor((np.asarray(points, dtype=float) - self.offset) / self.edge).astype(np.int64)

    @staticmethod
    def _encode(idx: np.ndarray) -> np.ndarray:
        b = np.int64(1 << 20)
        i = np.clip(idx, -(1 << 19), (1 << 19) - 1) + (1 << 19)
        return (i[:, 0] * b + i[:, 1]) * b + i[:, 2]

    def locate(self, points) -> np.ndarray:
        k = self._encode(self.voxel_index(np.asarray(points, dtype=float).reshape(-1, 3)))
        pos = np.searchsorted(self.keys, k)
        pos = np.minimum(pos, self.keys.size - 1)
        return np.where(self.keys[pos] == k, pos, -1)

    @classmethod
    def from_points(cls, points, edge: float, offset=(0.0, 0.0, 0.0)) -> "CartesianGrid":
        if edge <= 0:
            raise ValueError("voxel edge must be positive")
        offset = np.asarray(offset, dtype=float).reshape(3)
        idx = np.floor((np.asarray(points, dtype=float).reshape(-1, 3) - offset) / edge).astype(np.int64)
        return cls(float(edge), offset, np.unique(cls._encode(idx)))


@dataclass(frozen=True)
class VoxelModel:
    """Fixed primary-frame grid plus the primary scan's per-voxel statistics."""

    grid: VoxelGrid
    counts: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    kind: str = "spherical"
    keep_axes: Optional[np.ndarray] = None  # (m, 3, 3) projection onto unambiguous axes
    points: Optional[np.ndarray] = None  # primary cloud, needed for field-of-view trimming
    slots: Optional[np.ndarray] = None
    fov: Optional[tuple[float, float]] = None  # sensor elevation limits [rad]

    def with_fov(self, points, slots, fov) -> "VoxelModel":
        """Attach the primary points and sensor elevation limits for field-of-view trimming."""
        lo, hi = map(float, fov)
        if not hi > lo:
            raise ValueError("field-of-view upper limit must exceed the lower")
        return replace(self, points=np.asarray(points, dtype=float), slots=np.asarray(slots), fov=(lo, hi))

    def __len__(self) -> int:
        return int(self.counts.size)


def unambiguous_axes(grid: VoxelGrid, counts, means, covs, extent_sigma: float = 2.0) -> np.ndarray:
    """Projection matrices removing principal axes that reach outside their voxel.

    For each voxel, test points at ``mean +- extent_sigma * sqrt(eigval)`` along
    every principal axis are located in the grid. An axis whose test points
    leave the voxel describes a surface cut by the voxel boundary; its mean is
    set by the boundary rather than the scene, so it carries no information.
    Row ``k`` of the returned matrix is eigenvector ``k`` if kept, else zero.
    """
    m = counts.size
    ev, vec = np.linalg.eigh(covs)
    half = extent_sigma * np.sqrt(np.maximum(ev, 0.0))  # (m, 3)
    offs = vec * half[:, None, :]  # column k = k-th axis offset
    tests = np.concatenate([means[:, None, :] + offs.transpose(0, 2, 1),
                            means[:, None, :] - offs.transpose(0, 2, 1)], axis=1)  # (m, 6, 3)
    slots = grid.locate(tests.reshape(-1, 3)).reshape(m, 6)
    own = np.arange(m)[:, None]
    inside = (slots[:, :3] == own) & (slots[:, 3:] == own)
    return vec.transpose(0, 2, 1) * inside[:, :, None]


def _model(grid, primary, slots, kind, fov) -> VoxelModel:
    counts, means, covs = grouped_stats(primary, slots, len(grid))
    model = VoxelModel(grid, counts, means, covs, kind, unambiguous_axes(grid, counts, means, covs))
    return model if fov is None else model.with_fov(primary, slots, fov)


def spherical_model(primary, cfg: WedgeGridConfig = WedgeGridConfig(), fov=None) -> VoxelModel:
    """Shadow-filtered spherical model; ``fov`` (elevation limits) enables field-of-view trimming."""
    primary = np.asarray(primary, dtype=float).reshape(-1, 3)
    grid = build_shadow_filtered_grid(primary, cfg)
    return _model(grid, primary, grid.primary_slots(), "spherical", fov)


def cartesian_model(primary, edge: float = 3.0, wall_alignment_offset=(0.0, 0.0, 0.0), fov=None) -> VoxelModel:
    primary = np.asarray(primary, dtype=float).reshape(-1, 3)
    grid = CartesianGrid.from_points(primary, edge, wall_alignment_offset)
    return _model(grid, primary, grid.locate(primary), "cartesian", fov)


def _elevation(points: np.ndarray) -> np.ndarray:
    return np.arctan2(points[:, 2], np.hypot(points[:, 0], points[:, 1]))


def _in_fov(points: np.ndarray, fov) -> np.ndarray:
    b = _elevation(points)
    return (b >= fov[0]) & (b <= fov[1])


def cartesian_grid_prepare(primary, secondary, edge: float = 3.0, wall_alignment_offset=(0.0, 0.0, 0.0)):
    """Cartesian model of the primary and untransformed secondary statistics on the same grid.

    ``wall_alignment_offset`` shifts the voxel lattice so a chosen wall plane
    passes through voxel centres. No shadow filtering is applied.
    """
    model = cartesian_model(primary, edge, wall_alignment_offset)
    secondary = np.asarray(secondary, dtype=float).reshape(-1, 3)
    sec = grouped_stats(secondary, model.grid.locate(secondary), len(model))
    return model, sec


# ---------------------------------------------------------------- solver


MAX_CYCLE = 8  # longest iterate cycle recognised as converged


@dataclass(frozen=True)
class MatchConfig:
    max_iterations: int = 50
    step_tolerance: float = 1e-6
    # a step this small in units of predicted sigma also ends the loop; membership
    # changes at voxel boundaries can otherwise leave a tiny two-cycle
    statistical_step_tolerance: float = 0.05
    min_points_per_voxel: int = 5
    divergence_radius: float = 5.0
    point_covariance_floor: float = 1e-6  # [m^2] added to each point-scatter covariance
    max_voxel_condition: float = 1e8
    max_normal_condition: float = 1e12
    prune_extended_axes: bool = True
    mutual_fov: bool = True  # used only when the model carries sensor elevation limits

    def __post_init__(self):
        if (self.max_iterations <= 0 or self.step_tolerance <= 0 or self.min_points_per_voxel <= 0
                or self.divergence_radius <= 0 or self.statistical_step_tolerance < 0):
            raise ValueError("match configuration values must be positive")


@dataclass(frozen=True)
class SolutionReport:
    estimate: RigidTransform
    state: np.ndarray
    predicted_covariance: np.ndarray
    iterations: int
    converged: bool
    voxels_used: int

    def to_dict(self) -> dict:
        return {
            "state": dict(zip(STATE_LABELS, map(float, self.state))),
            "predicted_sigma": dict(zip(STATE_LABELS, map(float, predicted_sigma(self)))),
            "iterations": self.iterations,
            "converged": self.converged,
            "voxels_used": self.voxels_used,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def predicted_sigma(report: SolutionReport) -> np.ndarray:
    return np.sqrt(np.diag(report.predicted_covariance))


def transformed_mean_jacobian(state, raw_means: np.ndarray) -> np.ndarray:
    """d/dstate of ``R(phi, theta, psi) @ m - (x, y, z)`` for each raw mean ``m``; shape (k, 3, 6)."""
    _, _, _, phi, theta, psi = np.asarray(state, dtype=float)
    dphi, dtheta, dpsi = euler_derivatives(phi, theta, psi)
    m = np.asarray(raw_means, dtype=float).reshape(-1, 3)
    J = np.empty((m.shape[0], 3, 6))
    J[:, :, :3] = -np.eye(3)
    J[:, :, 3] = m @ dphi.T
    J[:, :, 4] = m @ dtheta.T
    J[:, :, 5] = m @ dpsi.T
    return J


@dataclass
class _System:
    normal: np.ndarray
    rhs: np.ndarray
    n_used: int


def _normal_system(model: VoxelModel, secondary: np.ndarray, state: np.ndarray, cfg: MatchConfig) -> _System:
    R = rotation_from_euler(*state[3:])
    t = state[:3]
    q = secondary @ R.T - t
    slots = model.grid.locate(q)
    counts, means, covs = model.counts, model.means, model.covs
    if model.fov is not None and cfg.mutual_fov:
        # the sensor field of view moves with it: compare only points each scan could have seen
        slots = np.where(_in_fov(q, model.fov), slots, -1)
        seen = _in_fov((model.points + t) @ R, model.fov)
        counts, means, covs = grouped_stats(model.points, np.where(seen, model.slots, -1), len(model))
    n_s, mu_s, cov_s = grouped_stats(q, slots, len(model))
    use = (counts >= cfg.min_points_per_voxel) & (n_s >= cfg.min_points_per_voxel)
    idx = np.flatnonzero(use)
    if idx.size == 0:
        return _System(np.zeros((6, 6)), np.zeros(6), 0)
    eps = cfg.point_covariance_floor * np.eye(3)
    C = (covs[idx] + eps) / counts[idx, None, None] + (cov_s[idx] + eps) / n_s[idx, None, None]
    y = means[idx] - mu_s[idx]
    raw = (mu_s[idx] + t) @ R  # secondary-frame means
    J = transformed_mean_jacobian(state, raw)
    if cfg.prune_extended_axes and model.keep_axes is not None:
        L = model.keep_axes[idx]
        kept = np.any(L != 0, axis=2)  # (k, 3)
        C = L @ C @ L.transpose(0, 2, 1)
        # pad pruned diagonals at the kept scale so they do not distort the condition test
        scale = np.trace(C, axis1=1, axis2=2) / np.maximum(kept.sum(axis=1), 1)
        C = C + np.eye(3) * (~kept)[:, None, :] * scale[:, None, None]
        y = np.einsum("kab,kb->ka", L, y)
        J = L @ J
    else:
        kept = np.ones((idx.size, 3), dtype=bool)
    ev = np.linalg.eigvalsh(C)
    ok = (ev[:, 0] * cfg.max_voxel_condition > ev[:, -1]) & kept.any(axis=1)
    C, y, J, kept = C[ok], y[ok], J[ok], kept[ok]
    W = np.linalg.inv(C) * (kept[:, :, None] & kept[:, None, :])
    JtW = np.einsum("kai,kab->kib", J, W)
    A = np.einsum("kib,kbj->ij", JtW, J)
    b = np.einsum("kib,kb->i", JtW, y)
    return _System(0.5 * (A + A.T), b, int(np.count_nonzero(ok)))


def match(model: VoxelModel, secondary, init: RigidTransform = RigidTransform(),
          cfg: MatchConfig = MatchConfig()) -> SolutionReport:
    """Register ``secondary`` onto the primary voxel model.

    Raises:
        InsufficientVoxelsError: fewer than six usable voxels at some iterate.
        RankDeficiencyError: normal matrix condition number above the limit.
        DivergenceError: translation estimate leaves ``divergence_radius``.
    """
    secondary = np.asarray(secondary, dtype=float).reshape(-1, 3)
    state = init.state()
    converged = False
    it = 0
    sys_ = None
    history = [state]
    while it < cfg.max_iterations:
        it += 1
        sys_ = _normal_system(model, secondary, state, cfg)
        if sys_.n_used < 6:
            raise InsufficientVoxelsError(f"only {sys_.n_used} usable voxels")
        if np.linalg.cond(sys_.normal) > cfg.max_normal_condition:
            raise RankDeficiencyError("normal matrix is ill-conditioned")
        step = np.linalg.solve(sys_.normal, sys_.rhs)
        state = state + step
        if np.linalg.norm(state[:3]) > cfg.divergence_radius:
            raise DivergenceError(f"translation {np.linalg.norm(state[:3]):.3f} m beyond divergence radius")
        if (np.linalg.norm(step) < cfg.step_tolerance
                or np.sqrt(max(step @ sys_.normal @ step, 0.0)) < cfg.statistical_step_tolerance):
            converged = True
            break
        # membership toggling at voxel boundaries can trap the iterate in a short
        # cycle; settle at the cycle mean
        recent = history[-MAX_CYCLE:]
        hit = [k for k, h in enumerate(recent) if np.linalg.norm(state - h) < cfg.step_tolerance]
        if hit:
            state = np.mean(recent[hit[-1]:], axis=0)
            converged = True
            break
        history.append(state)
    cov = np.linalg.inv(sys_.normal)
    cov = 0.5 * (cov + cov.T)
    return SolutionReport(RigidTransform.from_state(state), state, cov, it, converged, sys_.n_used)


# ---------------------------------------------------------------- ground removal


GroundSpec = Union[None, float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def estimate_ground_plane(cloud) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Least-squares plane through the lowest decile of points."""
    p = np.asarray(cloud, dtype=float).reshape(-1, 3)
    low = p[p[:, 2] <= np.quantile(p[:, 2], 0.1)]
    A = np.column_stack([low[:, 0], low[:, 1], np.ones(len(low))])
    a, b, c = np.linalg.lstsq(A, low[:, 2], rcond=None)[0]
    return lambda x, y: a * x + b * y + c


def remove_ground_plane(cloud, height_tolerance: float = 0.3, ground: GroundSpec = None) -> np.ndarray:
    """Drop every point lying less than ``height_tolerance`` above the ground surface.

    ``ground`` is the ground height in the cloud's frame: a constant, a
    function of (x, y), or ``None`` to fit a plane to the lowest decile.
    """
    p = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if ground is None:
        ground = estimate_ground_plane(p)
    g = ground(p[:, 0], p[:, 1]) if callable(ground) else float(ground)
    return p[p[:, 2] - g >= height_tolerance]
