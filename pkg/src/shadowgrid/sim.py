"""Analytic ray-casting Lidar simulator.

Scenes are built from a ground surface (flat plane or smooth heightfield),
finite vertical walls and vertical circular columns. Every beam returns the
nearest hit within the sensor's range limits, perturbed along the ray by
Gaussian range noise. The sensor is gimballed: beam elevations stay fixed
relative to gravity and only the pose yaw turns the beam pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import RigidTransform

GROUND_LABEL = 0
WALL_LABEL_BASE = 1000
CYLINDER_LABEL_BASE = 2000
NO_HIT = -1


class PoseBelowSurfaceError(ValueError):
    pass


# ---------------------------------------------------------------- primitives


@dataclass(frozen=True)
class FlatGround:
    height: float = 0.0

    def height_at(self, x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, self.height)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, max_range: float) -> np.ndarray:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.height - origin[2]) / dz
        return np.where((dz < 0) & (t > 0), t, np.inf)


@dataclass(frozen=True)
class HeightField:
    """``z = offset + sum(a * sin(kx * x + ky * y + phase))``."""

    amplitudes: tuple[float, ...]
    kx: tuple[float, ...]
    ky: tuple[float, ...]
    phases: tuple[float, ...]
    offset: float = 0.0

    def __post_init__(self):
        n = len(self.amplitudes)
        if not (len(self.kx) == len(self.ky) == len(self.phases) == n):
            raise ValueError("heightfield component arrays differ in length")

    @property
    def slope_bound(self) -> float:
        """Upper bound on the terrain gradient norm."""
        return float(sum(abs(a) * math.hypot(kx, ky) for a, kx, ky in zip(self.amplitudes, self.kx, self.ky)))

    def height_at(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        h = np.full(np.broadcast(x, y).shape, self.offset)
        for a, kx, ky, ph in zip(self.amplitudes, self.kx, self.ky, self.phases):
            h = h + a * np.sin(kx * x + ky * y + ph)
        return h

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, max_range: float,
                  tol: float = 1e-6, max_steps: int = 2000) -> np.ndarray:
        # Sphere tracing with a Lipschitz bound never steps past the first crossing.
        n = dirs.shape[0]
        lip = np.abs(dirs[:, 2]) + self.slope_bound * np.hypot(dirs[:, 0], dirs[:, 1])
        s = np.zeros(n)
        out = np.full(n, np.inf)
        active = np.arange(n)
        for _ in range(max_steps):
            if active.size == 0:
                break
            p = origin + s[active, None] * dirs[active]
            f = p[:, 2] - self.height_at(p[:, 0], p[:, 1])
            hit = f < tol
            out[active[hit]] = s[active[hit]]
            s[active] += np.maximum(f, tol) / lip[active]
            active = active[~hit & (s[active] <= max_range)]
        return out


@dataclass(frozen=True)
class Wall:
    """Vertical rectangle spanning the segment (x0, y0)-(x1, y1) between z0 and z1."""

    x0: float
    y0: float
    x1: float
    y1: float
    z0: float
    z1: float

    def __post_init__(self):
        if math.hypot(self.x1 - self.x0, self.y1 - self.y0) <= 0 or self.z1 <= self.z0:
            raise ValueError("wall has zero area")

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, max_range: float) -> np.ndarray:
        ex, ey = self.x1 - self.x0, self.y1 - self.y0
        # normal in the horizontal plane
        nx, ny = -ey, ex
        denom = dirs[:, 0] * nx + dirs[:, 1] * ny
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.x0 - origin[0]) * nx + (self.y0 - origin[1]) * ny) / denom
            hx = origin[0] + t * dirs[:, 0] - self.x0
            hy = origin[1] + t * dirs[:, 1] - self.y0
            u = (hx * ex + hy * ey) / (ex * ex + ey * ey)
        z = origin[2] + t * dirs[:, 2]
        ok = (denom != 0) & (t > 0) & (u >= 0) & (u <= 1) & (z >= self.z0) & (z <= self.z1)
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Cylinder:
    """Vertical column with a flat top cap."""

    cx: float
    cy: float
    radius: float
    z0: float
    z1: float

    def __post_init__(self):
        if self.radius <= 0 or self.z1 <= self.z0:
            raise ValueError("degenerate cylinder")

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, max_range: float) -> np.ndarray:
        ox, oy = origin[0] - self.cx, origin[1] - self.cy
        dx, dy = dirs[:, 0], dirs[:, 1]
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius ** 2
        disc = b * b - 4.0 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            t_near = (-b - sq) / (2.0 * a)
            t_far = (-b + sq) / (2.0 * a)
        t_side = np.where(t_near > 0, t_near, t_far) if c < 0 else t_near
        z = origin[2] + t_side * dirs[:, 2]
        side_ok = (a > 0) & (disc >= 0) & (t_side > 0) & (z >= self.z0) & (z <= self.z1)
        t = np.where(side_ok, t_side, np.inf)
        # top cap, seen from above
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = (self.z1 - origin[2]) / dz
            cx_ = ox + tc * dx
            cy_ = oy + tc * dy
        cap_ok = (dz < 0) & (tc > 0) & (cx_ * cx_ + cy_ * cy_ <= self.radius ** 2)
        return np.minimum(t, np.where(cap_ok, tc, np.inf))


Ground = Union[FlatGround, HeightField]


@dataclass(frozen=True)
class Scene:
    ground: Ground = field(default_factory=FlatGround)
    walls: tuple[Wall, ...] = ()
    cylinders: tuple[Cylinder, ...] = ()
    kind: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def ground_height(self, x, y):
        return self.ground.height_at(x, y)


# ---------------------------------------------------------------- sensor


@dataclass(frozen=True)
class LidarModel:
    elevations: tuple[float, ...]  # radians, strictly increasing
    azimuth_step: float  # radians, divides 2*pi
    max_range: float = 120.0
    min_range: float = 1.0
    range_noise_sigma: float = 0.02

    def __post_init__(self):
        el = np.asarray(self.elevations, dtype=float)
        if el.size == 0 or np.any(np.diff(el) <= 0):
            raise ValueError("elevation angles must be strictly increasing")
        n = 2 * math.pi / self.azimuth_step
        if abs(n - round(n)) > 1e-6:
            raise ValueError("azimuth_step must divide 2*pi")
        if self.range_noise_sigma < 0:
            raise ValueError("range noise sigma must be non-negative")
        if not 0 <= self.min_range < self.max_range:
            raise ValueError("invalid range limits")

    @property
    def channels(self) -> int:
        return len(self.elevations)

    @property
    def n_azimuth(self) -> int:
        return int(round(2 * math.pi / self.azimuth_step))

    @classmethod
    def uniform(cls, channels: int, elev_min_deg: float, elev_max_deg: float, azimuth_step_deg: float,
                **kwargs) -> "LidarModel":
        el = np.radians(np.linspace(elev_min_deg, elev_max_deg, channels))
        return cls(tuple(float(e) for e in el), math.radians(azimuth_step_deg), **kwargs)

    @classmethod
    def hdl64(cls, **kwargs) -> "LidarModel":
        return cls.uniform(64, -24.8, 2.0, 0.2, **kwargs)

    @classmethod
    def desk(cls, **kwargs) -> "LidarModel":
        return cls.uniform(32, -24.8, 2.0, 0.72, **kwargs)

    def with_noise(self, sigma: float) -> "LidarModel":
        return LidarModel(self.elevations, self.azimuth_step, self.max_range, self.min_range, sigma)

    def beam_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth and elevation of every beam, channel-major.

        Azimuths sit half a step off the -pi seam so no beam lies on a bin edge.
        """
        az = -math.pi + (np.arange(self.n_azimuth) + 0.5) * self.azimuth_step
        el = np.asarray(self.elevations)
        A, E = np.meshgrid(az, el)
        return A.ravel(), E.ravel()

    def beam_directions(self) -> np.ndarray:
        a, e = self.beam_angles()
        ce = np.cos(e)
        return np.stack([np.cos(a) * ce, np.sin(a) * ce, np.sin(e)], axis=1)


# ---------------------------------------------------------------- casting


@dataclass(frozen=True)
class RayHits:
    """Noise-free ranges for the beams of one sweep, in the sensor frame."""

    directions: np.ndarray  # (n, 3) unit vectors, sensor frame
    ranges: np.ndarray  # (n,) true range, inf where no hit
    labels: np.ndarray  # (n,) primitive label, -1 where no hit

    def noisy_cloud(self, sigma: float, seed=None, min_range: float = 0.0,
                    max_range: float = np.inf, with_labels: bool = False):
        keep = np.isfinite(self.ranges) & (self.ranges >= min_range) & (self.ranges <= max_range)
        r = self.ranges[keep]
        if sigma > 0:
            r = r + np.random.default_rng(seed).normal(0.0, sigma, r.size)
        pts = r[:, None] * self.directions[keep]
        return (pts, self.labels[keep]) if with_labels else pts


def cast_rays(scene: Scene, origin, dirs: np.ndarray, max_range: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance and label for world-frame rays from ``origin``."""
    origin = np.asarray(origin, dtype=float)
    best = scene.ground.intersect(origin, dirs, max_range)
    label = np.where(np.isfinite(best), GROUND_LABEL, NO_HIT)
    for k, w in enumerate(scene.walls):
        t = w.intersect(origin, dirs, max_range)
        closer = t < best
        best = np.where(closer, t, best)
        label = np.where(closer, WALL_LABEL_BASE + k, label)
    for k, c in enumerate(scene.cylinders):
        t = c.intersect(origin, dirs, max_range)
        closer = t < best
        best = np.where(closer, t, best)
        label = np.where(closer, CYLINDER_LABEL_BASE + k, label)
    return best, label


def raycast_hits(scene: Scene, lidar: LidarModel, pose: RigidTransform) -> RayHits:
    """Noise-free sweep from ``pose`` (a sensor-to-world transform).

    Raises:
        PoseBelowSurfaceError: if the sensor is not above the ground surface.
    """
    origin = pose.position
    if origin[2] <= float(scene.ground_height(origin[0], origin[1])):
        raise PoseBelowSurfaceError(f"sensor at {origin} is not above the ground")
    d_sensor = lidar.beam_directions()
    d_world = d_sensor @ pose.rotation.T
    r, lab = cast_rays(scene, origin, d_world, lidar.max_range)
    out = ~(np.isfinite(r) & (r >= lidar.min_range) & (r <= lidar.max_range))
    r = np.where(out, np.inf, r)
    lab = np.where(out, NO_HIT, lab)
    return RayHits(d_sensor, r, lab)


def raycast_scan(scene: Scene, lidar: LidarModel, pose: RigidTransform, seed=None,
                 with_labels: bool = False):
    """Simulated sweep as an ``(n, 3)`` cloud in the sensor frame."""
    hits = raycast_hits(scene, lidar, pose)
    return hits.noisy_cloud(lidar.range_noise_sigma, seed, with_labels=with_labels)


# ---------------------------------------------------------------- scenes


def build_roadway_scene(
    n_columns: int = 10,
    column_radius: float = 0.4,
    column_spacing: float = 8.0,
    column_line_y: float = 6.0,
    column_x0: Optional[float] = None,
    column_height: float = 8.0,
    wall_offset: float = 10.5,
    wall_height: float = 4.0,
    road_length: float = 240.0,
    mount_height: float = 1.8,
    closed_ends: bool = False,
) -> Scene:
    """Flat road between two sound walls, with a row of columns beside the lane.

    The sensor travels along +x at y = 0; the ground lies ``mount_height``
    below the sensor. Columns stand at ``y = column_line_y``. With
    ``closed_ends`` two cross walls close the road at ``x = +-road_length / 2``;
    without columns that enclosure casts no shadows anywhere.
    """
    if n_columns < 0 or road_length <= 0 or wall_offset <= 0:
        raise ValueError("column count must be non-negative; road length and wall offset positive")
    g = -mount_height
    half = road_length / 2
    walls = (
        Wall(-half, wall_offset, half, wall_offset, g, g + wall_height),
        Wall(-half, -wall_offset, half, -wall_offset, g, g + wall_height),
    )
    if closed_ends:
        walls += (Wall(half, -wall_offset, half, wall_offset, g, g + wall_height),
                  Wall(-half, wall_offset, -half, -wall_offset, g, g + wall_height))
    if column_x0 is None:
        column_x0 = 10.0 - 0.5 * (n_columns - 1) * column_spacing
    cols = tuple(
        Cylinder(column_x0 + k * column_spacing, column_line_y, column_radius, g, g + column_height)
        for k in range(n_columns)
    )
    params = dict(n_columns=n_columns, column_radius=column_radius, column_spacing=column_spacing,
                  column_line_y=column_line_y, column_x0=column_x0, column_height=column_height,
                  wall_offset=wall_offset, wall_height=wall_height, road_length=road_length,
                  mount_height=mount_height, closed_ends=closed_ends)
    return Scene(FlatGround(g), walls, cols, kind="roadway", params=params)


def build_offroad_scene(
    seed: int = 0,
    n_components: int = 8,
    amplitude: float = 3.0,
    wavelength_range: tuple[float, float] = (15.0, 60.0),
    extent: float = 100.0,
    mount_height: float = 1.8,
) -> Scene:
    """Hilly terrain from seeded sinusoids, shifted so the origin sits ``mount_height`` above ground.

    ``amplitude`` is the total relief amplitude shared among components.
    """
    if n_components < 1 or amplitude < 0 or extent <= 0:
        raise ValueError("terrain needs at least one component, non-negative amplitude and positive extent")
    rng = np.random.default_rng(seed)
    lam = rng.uniform(*wavelength_range, n_components)
    heading = rng.uniform(0, 2 * np.pi, n_components)
    k = 2 * np.pi / lam
    weights = rng.uniform(0.5, 1.0, n_components)
    amps = amplitude * weights / weights.sum()
    phases = rng.uniform(0, 2 * np.pi, n_components)
    offset = -mount_height - float(np.sum(amps * np.sin(phases)))
    hf = HeightField(tuple(amps.tolist()), tuple((k * np.cos(heading)).tolist()),
                     tuple((k * np.sin(heading)).tolist()), tuple(phases.tolist()), offset)
    params = dict(seed=seed, n_components=n_components, amplitude=amplitude,
                  wavelength_range=list(wavelength_range), extent=extent, mount_height=mount_height)
    return Scene(hf, (), (), kind="offroad", params=params)


# ---------------------------------------------------------------- trajectories


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    poses: tuple[RigidTransform, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size != len(self.poses):
            raise ValueError("one timestamp per pose required")
        if t.size > 1:
            dt = np.diff(t)
            if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * max(1.0, dt.max()):
                raise ValueError("timestamps must increase at a constant rate")

    def __len__(self) -> int:
        return len(self.poses)


def generate_trajectory(kind: str, speed: float = 5.0, rate_hz: float = 10.0, n_poses: Optional[int] = None,
                        yaw_rate_deg: float = 30.0, scene: Optional[Scene] = None) -> Trajectory:
    """Constant-rate sensor poses starting at the origin.

    ``roadway``: straight line along +x (41 poses, 20 m). ``offroad``: forward
    motion with a constant yaw rate (21 poses); when ``scene`` is given the
    sensor keeps its initial clearance over the terrain.
    """
    dt = 1.0 / rate_hz
    if kind == "roadway":
        n = 41 if n_poses is None else n_poses
        t = np.arange(n) * dt
        poses = tuple(RigidTransform.from_pose([speed * ti, 0.0, 0.0]) for ti in t)
    elif kind == "offroad":
        n = 21 if n_poses is None else n_poses
        t = np.arange(n) * dt
        w = math.radians(yaw_rate_deg)
        yaw = w * t
        if w == 0:
            x, y = speed * t, np.zeros_like(t)
        else:
            x, y = speed / w * np.sin(yaw), speed / w * (1 - np.cos(yaw))
        z = np.zeros_like(t)
        if scene is not None:
            clearance = -float(scene.ground_height(0.0, 0.0))
            z = scene.ground_height(x, y) + clearance
        poses = tuple(RigidTransform.from_pose([x[k], y[k], z[k]], yaw=yaw[k]) for k in range(n))
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    return Trajectory(t, poses)


def scene_to_dict(scene: Scene) -> dict:
    g = scene.ground
    if isinstance(g, FlatGround):
        ground = {"type": "flat", "height_m": g.height}
    else:
        ground = {"type": "heightfield", "amplitudes_m": list(g.amplitudes), "kx_per_m": list(g.kx),
                  "ky_per_m": list(g.ky), "phases_rad": list(g.phases), "offset_m": g.offset}
    return {
        "kind": scene.kind,
        "params": scene.params,
        "ground": ground,
        "walls": [dict(x0_m=w.x0, y0_m=w.y0, x1_m=w.x1, y1_m=w.y1, z0_m=w.z0, z1_m=w.z1) for w in scene.walls],
        "cylinders": [dict(cx_m=c.cx, cy_m=c.cy, radius_m=c.radius, z0_m=c.z0, z1_m=c.z1) for c in scene.cylinders],
    }


def scene_from_dict(d: dict) -> Scene:
    g = d["ground"]
    if g["type"] == "flat":
        ground: Ground = FlatGround(g["height_m"])
    else:
        ground = HeightField(tuple(g["amplitudes_m"]), tuple(g["kx_per_m"]), tuple(g["ky_per_m"]),
                             tuple(g["phases_rad"]), g["offset_m"])
    walls = tuple(Wall(w["x0_m"], w["y0_m"], w["x1_m"], w["y1_m"], w["z0_m"], w["z1_m"]) for w in d["walls"])
    cyls = tuple(Cylinder(c["cx_m"], c["cy_m"], c["radius_m"], c["z0_m"], c["z1_m"]) for c in d["cylinders"])
    return Scene(ground, walls, cyls, kind=d.get("kind", "custom"), params=d.get("params", {}))


def beam_hits_for(scene: Scene, origin: Sequence[float], directions) -> np.ndarray:
    """Nearest-hit ranges for arbitrary rays; convenience for tests and probes."""
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return cast_rays(scene, origin, d)[0]


# ---------------------------------------------------------------- shadow probe


def shadow_probe_scene(rho_l: float, rho_v: float, radius: float = 1.0, height: float = 10.0) -> Scene:
    """Column at ``rho_l`` on the +x axis in front of a wall ``rho_v`` behind it; no ground in view."""
    x_wall = rho_l + rho_v
    half = 4.0 * x_wall * radius / rho_l + 10.0
    wall = Wall(x_wall, half, x_wall, -half, -height, height)
    col = Cylinder(rho_l, 0.0, radius, -height, height)
    return Scene(FlatGround(-1e3), (wall,), (col,), kind="shadow_probe")


def measure_shadow_mean_shift(rho_l: float, rho_v: float, delta: float, radius: float = 1.0,
                              azimuth_step_deg: float = 0.02, window: float = 1.0) -> float:
    """Noise-free shift of the lit-point mean in a world-fixed box cut by the shadow edge.

    The sensor moves by ``delta`` along +y, across the line of sight to the
    column. The box spans the wall from the shadow centre line to ``window``
    past the initial upper shadow edge, so the edge stays inside it in both
    sweeps. Returns the signed mean shift along y.
    """
    scene = shadow_probe_scene(rho_l, rho_v, radius)
    lidar = LidarModel(tuple(math.radians(e) for e in (-1.0, 0.0, 1.0)), math.radians(azimuth_step_deg),
                       max_range=10 * (rho_l + rho_v), min_range=0.0, range_noise_sigma=0.0)
    x_wall = rho_l + rho_v
    edge = x_wall * math.tan(math.asin(radius / rho_l))
    if delta * rho_v / rho_l >= edge:
        raise ValueError("shadow edge would leave the probe box")
    means = []
    for y0 in (0.0, delta):
        pose = RigidTransform.from_state([0.0, -y0, 0.0, 0.0, 0.0, 0.0])
        pts, lab = raycast_scan(scene, lidar, pose, with_labels=True)
        y = pts[lab == WALL_LABEL_BASE, 1] + y0
        means.append(float(np.mean(y[(y >= 0.0) & (y <= edge + window)])))
    return means[1] - means[0]
