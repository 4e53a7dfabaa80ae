"""Spherical wedge grid with adaptive radial bounds for shadow removal.

Points are binned into azimuth x elevation wedges. Inside each wedge the radii
are sorted and scanned for range jumps larger than ``jump_threshold``; only the
nearest run of more than ``min_cluster`` points without an internal jump is
kept, which drops surfaces lying in the shadow of a nearer object. Each wedge
therefore holds at most one radial voxel, and the resulting grid is reused to
bin the secondary scan during matching.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import RigidTransform, apply_transform, spherical_from_cartesian, TWO_PI

MIN_OBSERVABLE_VOXELS = 6


class EmptyCloudError(ValueError):
    pass


@dataclass(frozen=True)
class WedgeGridConfig:
    delta_alpha: float = math.radians(7.2)
    delta_beta: float = math.radians(7.2)
    beta_min: float = math.radians(-25.2)
    beta_max: float = math.radians(2.4)
    jump_threshold: float = 0.2  # T [m]
    min_cluster: int = 50  # N; a voxel needs more than N points
    max_pad: float = 0.5  # [m]

    def __post_init__(self):
        if self.delta_alpha <= 0 or self.delta_beta <= 0:
            raise ValueError("bin widths must be positive")
        n = TWO_PI / self.delta_alpha
        if abs(n - round(n)) > 1e-6:
            raise ValueError(f"2*pi is not an integer multiple of delta_alpha ({n:.6f} bins)")
        if not self.beta_max > self.beta_min:
            raise ValueError("beta_max must exceed beta_min")
        if self.jump_threshold <= 0:
            raise ValueError("jump_threshold must be positive")
        if self.min_cluster < 2:
            raise ValueError("min_cluster must be at least 2")
        if self.max_pad < 0:
            raise ValueError("max_pad must be non-negative")

    @property
    def n_alpha(self) -> int:
        return int(round(TWO_PI / self.delta_alpha))

    @property
    def n_beta(self) -> int:
        return int(math.ceil((self.beta_max - self.beta_min) / self.delta_beta - 1e-9))

    @property
    def n_wedges(self) -> int:
        return self.n_alpha * self.n_beta

    def alpha_lower(self, i) -> np.ndarray:
        return -np.pi + np.asarray(i) * self.delta_alpha

    def beta_lower(self, j) -> np.ndarray:
        return self.beta_min + np.asarray(j) * self.delta_beta

    @classmethod
    def for_lidar(cls, elevations, lower_margin: float = 0.0, **kwargs) -> "WedgeGridConfig":
        """Elevation limits set half a channel spacing outside the outermost beams.

        ``lower_margin`` [rad] raises the lower limit. The lowest beam cone
        meets the ground close to the sensor and moves with it, truncating
        near-ground wedges of the second scan much as a shadow edge would.
        """
        el = np.sort(np.asarray(elevations, dtype=float))
        half = 0.5 * float(np.min(np.diff(el))) if el.size > 1 else 1e-3
        return cls(beta_min=float(el[0] - half + lower_margin), beta_max=float(el[-1] + half), **kwargs)


@dataclass(frozen=True)
class WedgeSet:
    i: int
    j: int
    indices: np.ndarray  # into the source cloud, ordered by (radius, index)
    radii: np.ndarray  # ascending


@dataclass(frozen=True)
class WedgeAssignment:
    wedge_id: np.ndarray  # flat id i * n_beta + j per point, -1 when out of elevation range
    spherical: np.ndarray  # (n, 3) r, alpha, beta
    n_dropped: int
    wedges: list[WedgeSet]


@dataclass(frozen=True)
class RadialVoxel:
    i: int
    j: int
    r_lower: float
    r_upper: float
    indices: np.ndarray  # retained primary points
    r_lower_unpadded: float = field(default=float("nan"))
    r_upper_unpadded: float = field(default=float("nan"))

    @property
    def count(self) -> int:
        return int(self.indices.size)


def wedge_ids(sph: np.ndarray, cfg: WedgeGridConfig) -> np.ndarray:
    """Flat wedge id for each spherical point, -1 outside the elevation limits."""
    alpha, beta = sph[:, 1], sph[:, 2]
    i = np.floor((alpha + np.pi) / cfg.delta_alpha).astype(np.int64)
    i = np.clip(i, 0, cfg.n_alpha - 1)
    j = np.floor((beta - cfg.beta_min) / cfg.delta_beta).astype(np.int64)
    ok = (beta >= cfg.beta_min) & (beta < cfg.beta_max) & (j >= 0) & (j < cfg.n_beta)
    return np.where(ok, i * cfg.n_beta + j, -1)


def assign_wedges(cloud, cfg: WedgeGridConfig) -> WedgeAssignment:
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if cloud.shape[0] == 0:
        raise EmptyCloudError("cannot bin an empty point cloud")
    finite = np.all(np.isfinite(cloud), axis=1)
    sph = np.full_like(cloud, np.nan)
    sph[finite] = spherical_from_cartesian(cloud[finite], check_origin=False)
    ids = np.full(cloud.shape[0], -1, dtype=np.int64)
    ids[finite] = wedge_ids(sph[finite], cfg)
    ids[finite & (sph[:, 0] <= 0)] = -1

    valid = np.flatnonzero(ids >= 0)
    # sort by wedge, then radius, then index (stable tie-break)
    order = valid[np.lexsort((valid, sph[valid, 0], ids[valid]))]
    sorted_ids = ids[order]
    cuts = np.flatnonzero(np.diff(sorted_ids)) + 1
    wedges = []
    for chunk in np.split(order, cuts) if order.size else []:
        wid = int(ids[chunk[0]])
        wedges.append(WedgeSet(wid // cfg.n_beta, wid % cfg.n_beta, chunk, sph[chunk, 0]))
    return WedgeAssignment(ids, sph, int(np.count_nonzero(ids < 0)), wedges)


def adaptive_radial_bounds(radii, cfg: WedgeGridConfig) -> Optional[tuple[int, int]]:
    """Indices ``(l_min, l_max)`` of the nearest valid cluster in sorted radii.

    Scanning outward, a gap larger than the jump threshold either closes the
    current cluster (if it already holds more than ``min_cluster`` points) or
    restarts it just past the gap. The first accepted cluster ends the scan.
    Returns ``None`` when no cluster is large enough.
    """
    r = np.asarray(radii, dtype=float)
    if r.size == 0:
        return None
    n = cfg.min_cluster
    l_min = 0
    for l in np.flatnonzero(np.diff(r) > cfg.jump_threshold) + 1:
        if l - l_min > n:
            return l_min, int(l) - 1
        l_min = int(l)
    last = r.size - 1
    if last + 1 - l_min > n:
        return l_min, last
    return None


def pad_bounds(
    v: RadialVoxel,
    nearest_excluded_inner: Optional[float],
    nearest_excluded_outer: Optional[float],
    cfg: WedgeGridConfig,
) -> RadialVoxel:
    """Widen the radial limits by ``max_pad`` or half the gap to the next excluded point."""
    lo, hi = v.r_lower, v.r_upper
    pad_in = cfg.max_pad
    if nearest_excluded_inner is not None:
        pad_in = min(pad_in, 0.5 * (lo - nearest_excluded_inner))
    pad_out = cfg.max_pad
    if nearest_excluded_outer is not None:
        pad_out = min(pad_out, 0.5 * (nearest_excluded_outer - hi))
    return RadialVoxel(
        v.i, v.j, max(lo - pad_in, 0.0), hi + pad_out, v.indices,
        r_lower_unpadded=lo, r_upper_unpadded=hi,
    )


def voxel_from_wedge(w: WedgeSet, cfg: WedgeGridConfig) -> Optional[RadialVoxel]:
    bounds = adaptive_radial_bounds(w.radii, cfg)
    if bounds is None:
        return None
    l_min, l_max = bounds
    raw = RadialVoxel(w.i, w.j, float(w.radii[l_min]), float(w.radii[l_max]), w.indices[l_min:l_max + 1])
    inner = float(w.radii[l_min - 1]) if l_min > 0 else None
    outer = float(w.radii[l_max + 1]) if l_max + 1 < w.radii.size else None
    return pad_bounds(raw, inner, outer, cfg)


@dataclass(frozen=True)
class ShadowGrid:
    """Radial voxels built from a primary scan, with vectorized lookup tables."""

    cfg: WedgeGridConfig
    voxels: tuple[RadialVoxel, ...]
    n_points: int
    n_dropped: int = 0

    def __post_init__(self):
        slot = np.full(self.cfg.n_wedges, -1, dtype=np.int64)
        lo = np.full(self.cfg.n_wedges, np.inf)
        hi = np.full(self.cfg.n_wedges, -np.inf)
        for k, v in enumerate(self.voxels):
            wid = v.i * self.cfg.n_beta + v.j
            slot[wid], lo[wid], hi[wid] = k, v.r_lower, v.r_upper
        object.__setattr__(self, "_slot", slot)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)

    def __len__(self) -> int:
        return len(self.voxels)

    def primary_slots(self) -> np.ndarray:
        """Voxel slot per primary point, -1 for excluded points."""
        out = np.full(self.n_points, -1, dtype=np.int64)
        for k, v in enumerate(self.voxels):
            out[v.indices] = k
        return out

    def locate(self, points) -> np.ndarray:
        """Voxel slot for each point (already in primary coordinates), -1 if outside."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        sph = spherical_from_cartesian(points, check_origin=False)
        wid = wedge_ids(sph, self.cfg)
        inside = wid >= 0
        w = np.where(inside, wid, 0)
        r = sph[:, 0]
        inside &= (r >= self._lo[w]) & (r <= self._hi[w])
        return np.where(inside, self._slot[w], -1)


def build_shadow_filtered_grid(primary, cfg: WedgeGridConfig = WedgeGridConfig()) -> ShadowGrid:
    """Run the adaptive-radial-bounds pass over every wedge of the primary scan.

    Raises:
        EmptyCloudError: if the primary scan has no points.
    """
    primary = np.asarray(primary, dtype=float).reshape(-1, 3)
    assignment = assign_wedges(primary, cfg)
    voxels = tuple(v for v in (voxel_from_wedge(w, cfg) for w in assignment.wedges) if v is not None)
    if len(voxels) < MIN_OBSERVABLE_VOXELS:
        warnings.warn(f"only {len(voxels)} voxels survived; pose is unobservable", RuntimeWarning, stacklevel=2)
    return ShadowGrid(cfg, voxels, primary.shape[0], assignment.n_dropped)


def filter_secondary(secondary, grid: ShadowGrid, t: RigidTransform) -> list[np.ndarray]:
    """Indices of secondary points falling in each voxel after mapping by ``t``.

    No voxels are created; points outside every existing voxel are dropped.
    """
    q = apply_transform(t, np.asarray(secondary, dtype=float).reshape(-1, 3))
    slots = grid.locate(q)
    return memberships_from_slots(slots, len(grid))


def memberships_from_slots(slots: np.ndarray, n_voxels: int) -> list[np.ndarray]:
    keep = np.flatnonzero(slots >= 0)
    order = keep[np.argsort(slots[keep], kind="stable")]
    counts = np.bincount(slots[keep], minlength=n_voxels)
    return np.split(order, np.cumsum(counts)[:-1])


def dump_grid(grid: ShadowGrid, dest=None) -> str:
    """Write one delimited record per voxel; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "alpha_i", "beta_j", "r_lower", "r_upper", "count"])
    cfg = grid.cfg
    for v in grid.voxels:
        w.writerow([v.i, v.j, repr(float(cfg.alpha_lower(v.i))), repr(float(cfg.beta_lower(v.j))),
                    repr(float(v.r_lower)), repr(float(v.r_upper)), v.count])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text

