"""Monte Carlo experiments comparing actual and predicted registration error.

Each experiment simulates scan pairs along a trajectory, registers every pair
several times under independent range noise, and compares the spread of the
errors with the solver's own covariance prediction.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .geometry import RigidTransform, relative_transform, wrap_angle
from .scan_match import (
    MatchConfig,
    MatchError,
    cartesian_model,
    match,
    predicted_sigma,
    remove_ground_plane,
    spherical_model,
)
from .sim import LidarModel, Scene, build_offroad_scene, build_roadway_scene, generate_trajectory, raycast_hits
from .spherical_grid import WedgeGridConfig

METHODS = ("spherical_shadow", "cartesian", "cartesian_no_ground")
SCENES = ("roadway", "offroad")
INITS = ("identity", "truth")
AXES = ("x", "y", "z", "phi", "theta", "psi")

# Minimum cluster size per sensor preset. It must exceed the points a single
# scan line leaves in one wedge (36 for hdl64, 10 for desk at 7.2 deg bins).
LIDAR_PRESETS = {
    "desk": (LidarModel.desk, 20),
    "hdl64": (LidarModel.hdl64, 50),
}


class ConfigError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExperimentConfig:
    scene_kind: str = "roadway"
    scene_params: Mapping[str, Any] = field(default_factory=dict)
    lidar: LidarModel = field(default_factory=LidarModel.desk)
    speed: float = 5.0  # [m/s]
    rate_hz: float = 10.0
    n_poses: Optional[int] = None
    yaw_rate_deg: float = 30.0  # [deg/s], offroad only
    method: str = "spherical_shadow"
    locations: Optional[int] = 10  # scan pairs sampled evenly along the trajectory; None = all
    trials_per_location: int = 3
    master_seed: int = 0
    init: str = "identity"
    grid: Optional[WedgeGridConfig] = None  # None: limits from the lidar, N from LIDAR_PRESETS
    match: MatchConfig = field(default_factory=MatchConfig)
    cartesian_edge: float = 3.0
    cartesian_anchor: Optional[tuple[float, float, float]] = None  # None: derived from the scene
    ground_tolerance: float = 0.3
    workers: int = 1

    def __post_init__(self):
        if self.scene_kind not in SCENES:
            raise ConfigError(f"unknown scene kind {self.scene_kind!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}; expected one of {INITS}")
        if self.trials_per_location < 1:
            raise ConfigError("trials_per_location must be at least 1")
        if self.locations is not None and self.locations < 1:
            raise ConfigError("locations must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.cartesian_edge <= 0 or self.ground_tolerance < 0:
            raise ConfigError("cartesian edge must be positive and ground tolerance non-negative")
        if self.speed < 0 or self.rate_hz <= 0:
            raise ConfigError("invalid trajectory speed or rate")

    def grid_config(self) -> WedgeGridConfig:
        if self.grid is not None:
            return self.grid
        return default_grid(self.lidar)

    def with_method(self, method: str) -> "ExperimentConfig":
        return replace(self, method=method)

    def to_dict(self) -> dict:
        return config_to_dict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def default_min_cluster(lidar: LidarModel) -> int:
    for factory, n in LIDAR_PRESETS.values():
        ref = factory()
        if ref.elevations == lidar.elevations and ref.azimuth_step == lidar.azimuth_step:
            return n
    return WedgeGridConfig().min_cluster


def default_grid(lidar: LidarModel) -> WedgeGridConfig:
    return WedgeGridConfig.for_lidar(lidar.elevations, min_cluster=default_min_cluster(lidar))


def sensor_fov(lidar: LidarModel) -> tuple[float, float]:
    """Elevation limits [rad] half a channel spacing outside the outermost beams."""
    g = WedgeGridConfig.for_lidar(lidar.elevations)
    return g.beta_min, g.beta_max


def desk_config(scene_kind: str = "roadway", method: str = "spherical_shadow", **kw) -> ExperimentConfig:
    """30 trials (10 locations x 3) with the 32-channel sensor."""
    return ExperimentConfig(scene_kind=scene_kind, method=method, **kw)


def full_scale_config(scene_kind: str = "roadway", method: str = "spherical_shadow", **kw) -> ExperimentConfig:
    """120 trials with the 64-channel sensor: 40 x 3 on the roadway, 20 x 6 offroad."""
    locs, trials = (40, 3) if scene_kind == "roadway" else (20, 6)
    kw.setdefault("locations", locs)
    kw.setdefault("trials_per_location", trials)
    return ExperimentConfig(scene_kind=scene_kind, method=method, lidar=LidarModel.hdl64(), **kw)


# JSON keys carry explicit units. Each table maps key -> (field, to_internal, to_json).
_ident = (lambda v: v, lambda v: v)
_deg = (math.radians, math.degrees)

_TRAJ_KEYS = {"speed_mps": ("speed", *_ident), "rate_hz": ("rate_hz", *_ident),
              "n_poses": ("n_poses", *_ident), "yaw_rate_degps": ("yaw_rate_deg", *_ident)}
_GRID_KEYS = {"delta_alpha_deg": ("delta_alpha", *_deg), "delta_beta_deg": ("delta_beta", *_deg),
              "beta_min_deg": ("beta_min", *_deg), "beta_max_deg": ("beta_max", *_deg),
              "jump_threshold_m": ("jump_threshold", *_ident), "min_cluster_count": ("min_cluster", *_ident),
              "max_pad_m": ("max_pad", *_ident)}
_MATCH_KEYS = {"max_iterations": ("max_iterations", *_ident), "step_tolerance": ("step_tolerance", *_ident),
               "statistical_step_tolerance_sigma": ("statistical_step_tolerance", *_ident),
               "min_points_per_voxel": ("min_points_per_voxel", *_ident),
               "divergence_radius_m": ("divergence_radius", *_ident),
               "point_covariance_floor_m2": ("point_covariance_floor", *_ident),
               "max_voxel_condition": ("max_voxel_condition", *_ident),
               "max_normal_condition": ("max_normal_condition", *_ident),
               "prune_extended_axes": ("prune_extended_axes", *_ident),
               "mutual_fov": ("mutual_fov", *_ident)}
_SCENE_COUNT_KEYS = {"n_columns", "n_components", "seed", "closed_ends"}  # unitless scene keys


def _translate(section: str, d: Mapping, table: Mapping) -> dict:
    out = {}
    for k, v in d.items():
        if k not in table:
            raise ConfigError(f"unknown key {section}.{k}")
        name, conv, _ = table[k]
        out[name] = conv(v) if v is not None else None
    return out


def _scene_params_from_json(d: Mapping) -> dict:
    out = {}
    for k, v in d.items():
        if k == "kind":
            continue
        if k in _SCENE_COUNT_KEYS:
            out[k] = v
        elif k.endswith("_m"):
            out[k[:-2]] = tuple(v) if isinstance(v, list) else v
        else:
            raise ConfigError(f"scene key {k!r} needs a unit suffix (_m) or must be unitless")
    return out


def _scene_params_to_json(params: Mapping) -> dict:
    return {(k if k in _SCENE_COUNT_KEYS else f"{k}_m"): (list(v) if isinstance(v, tuple) else v)
            for k, v in params.items()}


def lidar_from_json(d: Mapping) -> LidarModel:
    d = dict(d)
    extra = {}
    for key, name in (("max_range_m", "max_range"), ("min_range_m", "min_range"),
                      ("range_noise_sigma_m", "range_noise_sigma")):
        if key in d:
            extra[name] = float(d.pop(key))
    try:
        if "preset" in d:
            preset = d.pop("preset")
            if preset not in LIDAR_PRESETS:
                raise ConfigError(f"unknown lidar preset {preset!r}")
            if d:
                raise ConfigError(f"unexpected lidar keys with a preset: {sorted(d)}")
            return LIDAR_PRESETS[preset][0](**extra)
        if "elevations_deg" in d:
            el = tuple(math.radians(e) for e in d.pop("elevations_deg"))
            step = math.radians(d.pop("azimuth_step_deg"))
        else:
            n = int(d.pop("channels"))
            el = tuple(np.radians(np.linspace(d.pop("elevation_min_deg"), d.pop("elevation_max_deg"), n)).tolist())
            step = math.radians(d.pop("azimuth_step_deg"))
    except KeyError as exc:
        raise ConfigError(f"lidar section is missing {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid lidar: {exc}") from exc
    if d:
        raise ConfigError(f"unknown lidar keys {sorted(d)}")
    try:
        return LidarModel(el, step, **extra)
    except ValueError as exc:
        raise ConfigError(f"invalid lidar: {exc}") from exc


def lidar_to_json(lidar: LidarModel) -> dict:
    return {"elevations_deg": [math.degrees(e) for e in lidar.elevations],
            "azimuth_step_deg": math.degrees(lidar.azimuth_step), "max_range_m": lidar.max_range,
            "min_range_m": lidar.min_range, "range_noise_sigma_m": lidar.range_noise_sigma}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    g = cfg.grid_config()
    m = cfg.match
    return {
        "scene": {"kind": cfg.scene_kind, **_scene_params_to_json(cfg.scene_params)},
        "lidar": lidar_to_json(cfg.lidar),
        "trajectory": {k: getattr(cfg, f) for k, (f, _, _) in _TRAJ_KEYS.items()},
        "grid": {k: out(getattr(g, f)) for k, (f, _, out) in _GRID_KEYS.items()},
        "match": {k: out(getattr(m, f)) for k, (f, _, out) in _MATCH_KEYS.items()},
        "cartesian": {"edge_m": cfg.cartesian_edge,
                      "anchor_m": None if cfg.cartesian_anchor is None else list(cfg.cartesian_anchor)},
        "ground_removal": {"height_tolerance_m": cfg.ground_tolerance},
        "method": cfg.method,
        "locations": cfg.locations,
        "trials_per_location": cfg.trials_per_location,
        "master_seed": cfg.master_seed,
        "init": cfg.init,
        "workers": cfg.workers,
    }


_TOP_KEYS = {"scene", "lidar", "trajectory", "grid", "match", "cartesian", "ground_removal", "method",
             "locations", "trials_per_location", "master_seed", "init", "workers"}


def config_from_dict(d: Mapping) -> ExperimentConfig:
    """Build a config from its JSON form; missing sections take defaults.

    Raises:
        ConfigError: on unknown keys or invalid values.
    """
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kw: dict[str, Any] = {}
    scene = dict(d.get("scene", {}))
    kw["scene_kind"] = scene.get("kind", "roadway")
    kw["scene_params"] = _scene_params_from_json(scene)
    if "lidar" in d:
        kw["lidar"] = lidar_from_json(d["lidar"])
    kw.update(_translate("trajectory", d.get("trajectory", {}), _TRAJ_KEYS))
    for key in ("method", "locations", "trials_per_location", "master_seed", "init", "workers"):
        if key in d:
            kw[key] = d[key]
    try:
        if "grid" in d:
            gkw = _translate("grid", d["grid"], _GRID_KEYS)
            lidar = kw.get("lidar", LidarModel.desk())
            base = default_grid(lidar)
            kw["grid"] = replace(base, **{k: v for k, v in gkw.items() if v is not None})
        if "match" in d:
            kw["match"] = MatchConfig(**_translate("match", d["match"], _MATCH_KEYS))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    cart = dict(d.get("cartesian", {}))
    if set(cart) - {"edge_m", "anchor_m"}:
        raise ConfigError(f"unknown cartesian keys {sorted(set(cart) - {'edge_m', 'anchor_m'})}")
    if "edge_m" in cart:
        kw["cartesian_edge"] = float(cart["edge_m"])
    if cart.get("anchor_m") is not None:
        kw["cartesian_anchor"] = tuple(float(v) for v in cart["anchor_m"])
    ground = dict(d.get("ground_removal", {}))
    if set(ground) - {"height_tolerance_m"}:
        raise ConfigError("ground_removal only accepts height_tolerance_m")
    if "height_tolerance_m" in ground:
        kw["ground_tolerance"] = float(ground["height_tolerance_m"])
    cfg = ExperimentConfig(**kw)
    build_scene(cfg)  # surface bad scene parameters as config errors
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(d)


# ---------------------------------------------------------------- scene setup


def build_scene(cfg: ExperimentConfig) -> Scene:
    builder = build_roadway_scene if cfg.scene_kind == "roadway" else build_offroad_scene
    try:
        return builder(**cfg.scene_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scene parameters: {exc}") from exc


def build_trajectory(cfg: ExperimentConfig, scene: Scene):
    return generate_trajectory(cfg.scene_kind, speed=cfg.speed, rate_hz=cfg.rate_hz, n_poses=cfg.n_poses,
                               yaw_rate_deg=cfg.yaw_rate_deg, scene=scene)


def location_indices(n_pairs: int, locations: Optional[int]) -> np.ndarray:
    """Evenly spaced scan-pair indices along the trajectory."""
    if locations is None or locations >= n_pairs:
        return np.arange(n_pairs)
    return np.unique(np.round(np.linspace(0, n_pairs - 1, locations)).astype(int))


def cartesian_anchor(cfg: ExperimentConfig, scene: Scene, pose: RigidTransform) -> np.ndarray:
    """Lattice offset, in the primary sensor frame, placing walls and ground mid-voxel."""
    if cfg.cartesian_anchor is not None:
        return np.asarray(cfg.cartesian_anchor, dtype=float)
    e = cfg.cartesian_edge
    pos = pose.position
    ground_z = float(scene.ground_height(pos[0], pos[1])) - pos[2]
    wall_y = scene.walls[0].y0 - pos[1] if scene.walls else 0.5 * e
    anchor = np.array([0.0, wall_y - 0.5 * e, ground_z - 0.5 * e])
    # fold into (-e/2, e/2] so the lattice is the same but the numbers stay small
    return anchor - e * np.round(anchor / e)


def ground_in_sensor_frame(scene: Scene, pose: RigidTransform):
    """Ground height below sensor-frame (x, y) for a gimballed sensor at ``pose``."""
    R, pos = pose.rotation, pose.position

    def height(x, y):
        wx = R[0, 0] * x + R[0, 1] * y + pos[0]
        wy = R[1, 0] * x + R[1, 1] * y + pos[1]
        return scene.ground_height(wx, wy) - pos[2]

    return height


def trial_seeds(master_seed: int, location: int, trial: int) -> tuple[np.random.SeedSequence, ...]:
    """Independent noise streams for the primary and secondary scans of one trial."""
    return tuple(np.random.SeedSequence([int(master_seed), int(location), int(trial)]).spawn(2))


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class TrialRecord:
    location: int
    trial: int
    truth: np.ndarray
    estimate: np.ndarray
    error: np.ndarray
    predicted_sigma: np.ndarray
    converged: bool
    rejected: bool
    iterations: int = 0
    voxels_used: int = 0
    reason: str = ""
    elapsed_s: float = field(default=0.0, compare=False)  # preprocessing + matching wall time
    covariance: Optional[np.ndarray] = field(default=None, compare=False, repr=False)  # in memory only

    def __eq__(self, other):
        if not isinstance(other, TrialRecord):
            return NotImplemented
        arrays = ("truth", "estimate", "error", "predicted_sigma")
        scalars = ("location", "trial", "converged", "rejected", "iterations", "voxels_used", "reason")
        return (all(getattr(self, a) == getattr(other, a) for a in scalars)
                and all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True) for a in arrays))


def state_error(estimate, truth) -> np.ndarray:
    err = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    err[3:] = wrap_angle(err[3:])
    return err


def rejection_reason(converged: bool, estimate, init, truth) -> str:
    """Empty for an accepted solve.

    Besides hitting the iteration cap, a solve that ends nearer its initial
    guess than the true translation never left the starting basin.
    """
    if not converged:
        return "max_iterations"
    est = np.asarray(estimate)[:3]
    if np.linalg.norm(est - np.asarray(init)[:3]) < np.linalg.norm(est - np.asarray(truth)[:3]):
        return "stuck_at_initialization"
    return ""


def simulate_pair(cfg: ExperimentConfig, location: int = 0, trial: int = 0):
    """Noisy primary and secondary sweeps for one trial, as the experiment draws them.

    Returns ``(primary, secondary, truth, scene)`` with ``truth`` the
    secondary-to-primary transform.
    """
    scene = build_scene(cfg)
    traj = build_trajectory(cfg, scene)
    if not 0 <= location < len(traj) - 1:
        raise ConfigError(f"location {location} outside 0..{len(traj) - 2}")
    p1, p2 = traj.poses[location], traj.poses[location + 1]
    s1, s2 = trial_seeds(cfg.master_seed, location, trial)
    sigma = cfg.lidar.range_noise_sigma
    A = raycast_hits(scene, cfg.lidar, p1).noisy_cloud(sigma, s1)
    B = raycast_hits(scene, cfg.lidar, p2).noisy_cloud(sigma, s2)
    return A, B, relative_transform(p1, p2), scene


def _prepare(cfg: ExperimentConfig, scene: Scene, p1: RigidTransform, p2: RigidTransform, A, B):
    fov = sensor_fov(cfg.lidar)
    if cfg.method == "spherical_shadow":
        return spherical_model(A, cfg.grid_config(), fov), B
    anchor = cartesian_anchor(cfg, scene, p1)
    if cfg.method == "cartesian_no_ground":
        A = remove_ground_plane(A, cfg.ground_tolerance, ground_in_sensor_frame(scene, p1))
        B = remove_ground_plane(B, cfg.ground_tolerance, ground_in_sensor_frame(scene, p2))
    return cartesian_model(A, cfg.cartesian_edge, anchor, fov), B


def _run_location(cfg: ExperimentConfig, loc: int) -> list[TrialRecord]:
    scene = build_scene(cfg)
    traj = build_trajectory(cfg, scene)
    p1, p2 = traj.poses[loc], traj.poses[loc + 1]
    h1, h2 = raycast_hits(scene, cfg.lidar, p1), raycast_hits(scene, cfg.lidar, p2)
    truth_t = relative_transform(p1, p2)
    truth = truth_t.state()
    init = truth_t if cfg.init == "truth" else RigidTransform()
    sigma = cfg.lidar.range_noise_sigma
    nan6 = np.full(6, np.nan)
    out = []
    for trial in range(cfg.trials_per_location):
        s1, s2 = trial_seeds(cfg.master_seed, loc, trial)
        A, B = h1.noisy_cloud(sigma, s1), h2.noisy_cloud(sigma, s2)
        t0 = time.perf_counter()
        try:
            model, sec = _prepare(cfg, scene, p1, p2, A, B)
            rep = match(model, sec, init, cfg.match)
        except (MatchError, np.linalg.LinAlgError) as exc:
            out.append(TrialRecord(int(loc), trial, truth, nan6, nan6, nan6, False, True,
                                   reason=type(exc).__name__, elapsed_s=time.perf_counter() - t0))
            continue
        elapsed = time.perf_counter() - t0
        reason = rejection_reason(rep.converged, rep.state, init.state(), truth)
        out.append(TrialRecord(
            int(loc), trial, truth, rep.state, state_error(rep.state, truth), predicted_sigma(rep),
            rep.converged, bool(reason), rep.iterations, rep.voxels_used, reason, elapsed,
            rep.predicted_covariance,
        ))
    return out


def run_experiment(cfg: ExperimentConfig) -> list[TrialRecord]:
    """All trial records, ordered by (location, trial); deterministic given the config."""
    scene = build_scene(cfg)
    traj = build_trajectory(cfg, scene)
    locs = [int(v) for v in location_indices(len(traj) - 1, cfg.locations)]
    if cfg.workers == 1 or len(locs) == 1:
        chunks = [_run_location(cfg, loc) for loc in locs]
    else:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(locs))) as pool:
            chunks = list(pool.map(_run_location, [cfg] * len(locs), locs))
    return [r for chunk in chunks for r in chunk]


# ---------------------------------------------------------------- summaries


@dataclass(frozen=True)
class SummaryTable:
    actual_sigma: np.ndarray
    predicted_sigma: np.ndarray
    mean_error: np.ndarray
    accepted: int
    rejected: int
    total: int
    label: str = ""

    @property
    def ratio(self) -> np.ndarray:
        """Actual over mean predicted sigma, per axis."""
        return self.actual_sigma / self.predicted_sigma


def summarize(records: Sequence[TrialRecord], label: str = "") -> SummaryTable:
    """Pooled statistics over the accepted trials.

    Raises:
        InsufficientDataError: with fewer than two accepted trials.
    """
    ok = [r for r in records if r.converged and not r.rejected]
    if len(ok) < 2:
        raise InsufficientDataError(f"{len(ok)} accepted trials; at least 2 are needed")
    err = np.array([r.error for r in ok])
    pred = np.array([r.predicted_sigma for r in ok])
    return SummaryTable(err.std(axis=0, ddof=1), pred.mean(axis=0), err.mean(axis=0),
                        len(ok), len(records) - len(ok), len(records), label)


# ---------------------------------------------------------------- record files


_VEC = ("truth", "estimate", "error", "sigma")


def _record_columns() -> list[str]:
    cols = ["location", "trial", "converged", "rejected", "iterations", "voxels_used", "reason"]
    return cols + [f"{v}_{a}" for v in _VEC for a in AXES]


def records_to_csv(records: Sequence[TrialRecord], meta: Optional[Mapping[str, Any]] = None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_record_columns())
    for r in records:
        vecs = (r.truth, r.estimate, r.error, r.predicted_sigma)
        w.writerow([r.location, r.trial, int(r.converged), int(r.rejected), r.iterations, r.voxels_used, r.reason]
                   + [repr(float(x)) for v in vecs for x in v])
    return buf.getvalue()


def write_records(path, records: Sequence[TrialRecord], meta: Optional[Mapping[str, Any]] = None) -> Path:
    path = Path(path)
    try:
        path.write_text(records_to_csv(records, meta))
    except OSError as exc:
        raise OSError(f"cannot write records to {path}: {exc}") from exc
    return path


def read_records(path) -> tuple[list[TrialRecord], dict]:
    """Parse a records file; returns the records and the header comments."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read records from {path}: {exc}") from exc
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            k, _, v = line[1:].partition(":")
            meta[k.strip()] = v.strip()
        elif line:
            body.append(line)
    rows = list(csv.DictReader(body))
    out = []
    for row in rows:
        vec = {v: np.array([float(row[f"{v}_{a}"]) for a in AXES]) for v in _VEC}
        out.append(TrialRecord(int(row["location"]), int(row["trial"]), vec["truth"], vec["estimate"],
                               vec["error"], vec["sigma"], bool(int(row["converged"])),
                               bool(int(row["rejected"])), int(row["iterations"]), int(row["voxels_used"]),
                               row["reason"]))
    return out, meta


# ---------------------------------------------------------------- reports


_DISPLAY_SCALE = np.array([100.0, 100.0, 100.0, 180 / math.pi, 180 / math.pi, 180 / math.pi])
_DISPLAY_HEAD = ["std error x (cm)", "std error y (cm)", "std error z (cm)",
                 "std error phi (deg)", "std error theta (deg)", "std error psi (deg)"]


def render_text(table: SummaryTable, config_hash: str = "", seed=None) -> str:
    rows = [("Actual", table.actual_sigma * _DISPLAY_SCALE), ("Predicted", table.predicted_sigma * _DISPLAY_SCALE)]
    cells = [[""] + _DISPLAY_HEAD] + [[name] + [f"{v:.4g}" for v in vals] for name, vals in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(cells[0]))]
    lines = []
    if table.label:
        lines.append(table.label)
    for r in cells:
        lines.append(" | ".join(c.rjust(w) for c, w in zip(r, widths)))
    lines.append("actual/predicted: " + "  ".join(f"{a}={v:.3f}" for a, v in zip(AXES, table.ratio)))
    lines.append("mean error: " + "  ".join(f"{a}={v:.3g}" for a, v in zip(AXES, table.mean_error * _DISPLAY_SCALE)))
    lines.append(f"rejected {table.rejected} of {table.total} trials")
    lines.append(f"config {config_hash} seed {seed}")
    return "\n".join(lines) + "\n"


_CSV_UNITS = ["x_m", "y_m", "z_m", "phi_rad", "theta_rad", "psi_rad"]


def render_csv(table: SummaryTable, config_hash: str = "", seed=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity"] + _CSV_UNITS + ["accepted", "rejected", "total", "label", "config_hash", "master_seed"])
    tail = [table.accepted, table.rejected, table.total, table.label, config_hash, seed]
    for name, vals in (("actual_sigma", table.actual_sigma), ("predicted_sigma", table.predicted_sigma),
                       ("mean_error", table.mean_error)):
        w.writerow([name] + [repr(float(v)) for v in vals] + tail)
    return buf.getvalue()


def table_from_csv(text: str) -> SummaryTable:
    rows = {r["quantity"]: r for r in csv.DictReader(io.StringIO(text))}
    vec = {k: np.array([float(rows[k][u]) for u in _CSV_UNITS]) for k in rows}
    first = rows["actual_sigma"]
    return SummaryTable(vec["actual_sigma"], vec["predicted_sigma"], vec["mean_error"], int(first["accepted"]),
                        int(first["rejected"]), int(first["total"]), first["label"])


def render_svg(table: SummaryTable, config_hash: str = "", seed=None) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scaled_a = table.actual_sigma * _DISPLAY_SCALE
    scaled_p = table.predicted_sigma * _DISPLAY_SCALE
    with plt.rc_context({"svg.hashsalt": "shadowgrid", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
        for ax, sl, unit in ((axes[0], slice(0, 3), "cm"), (axes[1], slice(3, 6), "deg")):
            pos = np.arange(3)
            ax.bar(pos - 0.2, scaled_a[sl], 0.4, label="Actual")
            ax.bar(pos + 0.2, scaled_p[sl], 0.4, label="Predicted")
            ax.set_xticks(pos, AXES[sl])
            ax.set_ylabel(f"std error ({unit})")
            ax.set_yscale("log")
        axes[0].legend()
        fig.suptitle(f"{table.label} (config {config_hash}, seed {seed})".strip())
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


_RENDERERS = {"text": (render_text, ".txt"), "csv": (render_csv, ".csv"), "svg": (render_svg, ".svg")}


def report(table: SummaryTable, fmt: str, dest=None, config_hash: str = "", seed=None) -> str:
    """Render ``table`` as text, CSV or SVG; writes to ``dest`` when given.

    Raises:
        ValueError: for an unknown format.
        OSError: if ``dest`` cannot be written, with the path in the message.
    """
    if fmt not in _RENDERERS:
        raise ValueError(f"unknown report format {fmt!r}; expected one of {sorted(_RENDERERS)}")
    text = _RENDERERS[fmt][0](table, config_hash, seed)
    if dest is not None:
        dest = Path(dest)
        try:
            dest.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {dest}: {exc}") from exc
    return text


def report_suffix(fmt: str) -> str:
    return _RENDERERS[fmt][1]


def consistency_ratio(records: Sequence[TrialRecord]) -> np.ndarray:
    return summarize(records).ratio


def records_meta(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "master_seed": cfg.master_seed, "method": cfg.method,
            "scene": cfg.scene_kind}
