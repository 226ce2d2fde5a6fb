"""Synthetic V2I/V2V drive scenarios with emulated GPS, LiDAR and camera.

World frame: x east, y north, z up, meters. The receiver array lies along
x with broadside toward +y, so a transmitter's azimuth is atan2(dx, dy).
The transmitter is a vehicle (an axis-aligned box) driving along a
waypoint polyline; the receiver is a roadside unit (V2I) or a second
vehicle moving at constant velocity (V2V).
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ArrayConfig,
    Codebook,
    NoiseConfig,
    Path,
    PathSet,
    optimal_beam,
    power_profile,
    realize_channel,
    simulate_measurement,
)
from .errors import CoverageWarning
from .seeding import substream, subseed

SPEED_OF_LIGHT = 299_792_458.0
EARTH_RADIUS = 6_371_000.0

Box = tuple[float, float, float, float, float, float]  # xmin, ymin, zmin, xmax, ymax, zmax


@dataclass(frozen=True)
class GpsConfig:
    anchor_lat: float = 33.4200
    anchor_lon: float = -111.9280
    noise_std: float = 0.05  # meters


@dataclass(frozen=True)
class LidarConfig:
    rays: int = 512
    fan: float = math.pi  # horizontal fan width centered on broadside
    elevation_range: tuple[float, float] = (-0.35, 0.10)  # radians
    max_range: float = 80.0
    ground: bool = True


@dataclass(frozen=True)
class CameraConfig:
    width: int = 32
    height: int = 32
    view_width: float = 80.0  # meters across, centered on the receiver
    view_depth: float = 40.0  # meters ahead of the receiver
    blob_sigma: float = 1.0  # meters
    max_range: float = 60.0


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "V2I"
    n_samples: int = 400
    receiver_position: tuple[float, float] = (0.0, 0.0)
    receiver_height: float = 4.0
    receiver_velocity: tuple[float, float] = (0.0, 0.0)  # used for V2V
    waypoints: tuple[tuple[float, float], ...] = ((-40.0, 12.0), (40.0, 12.0))
    speed: float = 8.3  # m/s along the waypoint path, wrapping at the end
    position_jitter: float = 0.5  # meters of per-sample lateral wander
    tx_height: float = 1.5
    tx_size: tuple[float, float, float] = (4.5, 1.8, 1.5)
    obstacles: tuple[Box, ...] = ((-30.0, 25.0, 0.0, -18.0, 32.0, 8.0), (10.0, 26.0, 0.0, 24.0, 30.0, 6.0))
    max_reflections: int = 2
    reflection_coeff: float = 0.5
    carrier_hz: float = 60e9
    tx_power: float = 1.0
    n_subcarriers: int = 8
    cyclic_prefix_len: int = 1
    symbol_period: float = 20e-9
    pulse_kind: str = "sinc"
    measurement_noise: float = 0.0  # variance; 0 labels from the noise-free profile
    sample_interval: float = 0.1
    seed: int = 0
    gps: GpsConfig = field(default_factory=GpsConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)

    def __post_init__(self):
        if self.kind not in ("V2I", "V2V"):
            raise ValueError(f"kind must be V2I or V2V, got {self.kind!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be > 0")
        if len(self.waypoints) < 1:
            raise ValueError("trajectory needs at least one waypoint")
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        object.__setattr__(self, "waypoints", tuple(tuple(map(float, w)) for w in self.waypoints))
        object.__setattr__(self, "obstacles", tuple(tuple(map(float, b)) for b in self.obstacles))


@dataclass
class Sample:
    seq: int
    timestamp: float
    gps: tuple[float, float]
    image: np.ndarray  # (h, w, 3) uint8
    cloud: np.ndarray  # (n, 3) float32
    power_profile: np.ndarray  # (|Q|,) watts
    best_beam: int  # 1-based

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.seq == other.seq
            and self.timestamp == other.timestamp
            and tuple(self.gps) == tuple(other.gps)
            and self.best_beam == other.best_beam
            and np.array_equal(self.image, other.image)
            and np.array_equal(self.cloud, other.cloud)
            and np.array_equal(self.power_profile, other.power_profile)
        )


@dataclass
class SampleGeometry:
    tx_position: tuple[float, float]
    rx_position: tuple[float, float]
    azimuth: float
    elevation: float
    n_paths: int
    in_coverage: bool


@dataclass
class Dataset:
    samples: list[Sample]
    splits: dict[str, np.ndarray]
    n_beams: int
    n_elements: int
    seed: int = 0
    meta: dict = field(default_factory=dict)
    geometry: list[SampleGeometry] | None = field(default=None, compare=False)
    time_monotonic: bool = field(default=True, compare=False)

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_beams == other.n_beams
            and self.n_elements == other.n_elements
            and self.seed == other.seed
            and self.samples == other.samples
            and self.splits.keys() == other.splits.keys()
            and all(np.array_equal(self.splits[k], other.splits[k]) for k in self.splits)
        )

    def subset(self, name: str) -> list[Sample]:
        return [self.samples[i] for i in self.splits[name]]

    def labels(self, name: str | None = None) -> np.ndarray:
        idx = range(len(self.samples)) if name is None else self.splits[name]
        return np.array([self.samples[i].best_beam for i in idx], dtype=int)


def split_indices(n: int, seed: int, fractions=(0.6, 0.2, 0.2)) -> dict[str, np.ndarray]:
    """Seeded random partition of range(n) into train/val/test."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    order = substream(seed, "split").permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }


# --- trajectories ----------------------------------------------------------

def position_on_path(waypoints, distance: float) -> np.ndarray:
    """Point ``distance`` meters along the polyline, wrapping past the end."""
    pts = np.asarray(waypoints, dtype=float)
    if len(pts) == 1:
        return pts[0].copy()
    seg = np.diff(pts, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    total = lengths.sum()
    if total == 0:
        return pts[0].copy()
    d = distance % total
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    i = min(int(np.searchsorted(cum, d, side="right")) - 1, len(seg) - 1)
    frac = (d - cum[i]) / lengths[i] if lengths[i] > 0 else 0.0
    return pts[i] + frac * seg[i]


def _path_heading(waypoints, distance: float) -> np.ndarray:
    pts = np.asarray(waypoints, dtype=float)
    if len(pts) == 1:
        return np.array([1.0, 0.0])
    a, b = position_on_path(pts, distance), position_on_path(pts, distance + 0.01)
    d = b - a
    n = np.hypot(*d)
    return d / n if n > 0 else np.array([1.0, 0.0])


def _path_length(waypoints) -> float:
    pts = np.asarray(waypoints, dtype=float)
    return float(np.hypot(*np.diff(pts, axis=0).T).sum()) if len(pts) > 1 else 0.0


def tx_box(center_xy, size, z0: float = 0.0) -> Box:
    (x, y), (lx, ly, lz) = center_xy, size
    return (x - lx / 2, y - ly / 2, z0, x + lx / 2, y + ly / 2, z0 + lz)


# --- propagation -----------------------------------------------------------

def _angles(rx, tx):
    d = np.asarray(tx, float) - np.asarray(rx, float)
    horiz = math.hypot(d[0], d[1])
    return math.atan2(d[0], d[1]), math.atan2(d[2], horiz), float(np.linalg.norm(d))


def reflection_points(rx, tx, obstacles) -> list[tuple[np.ndarray, float]]:
    """Single-bounce specular points on vertical box faces (image method).

    Returns (bounce_point, total_length) for every face where the bounce
    lands inside the face rectangle.
    """
    rx, tx = np.asarray(rx, float), np.asarray(tx, float)
    out = []
    for xmin, ymin, zmin, xmax, ymax, zmax in obstacles:
        faces = ((0, xmin, (ymin, ymax)), (0, xmax, (ymin, ymax)), (1, ymin, (xmin, xmax)), (1, ymax, (xmin, xmax)))
        for axis, plane, (lo, hi) in faces:
            # both endpoints must lie on the outer side of this face
            outward = -1.0 if plane in (xmin, ymin) else 1.0
            if (rx[axis] - plane) * outward <= 0 or (tx[axis] - plane) * outward <= 0:
                continue
            image = tx.copy()
            image[axis] = 2 * plane - tx[axis]
            s = (plane - rx[axis]) / (image[axis] - rx[axis])
            p = rx + s * (image - rx)
            other = 1 - axis
            if lo <= p[other] <= hi and zmin <= p[2] <= zmax:
                out.append((p, float(np.linalg.norm(p - rx) + np.linalg.norm(tx - p))))
    return out


def build_pathset(spec: ScenarioSpec, rx3, tx3, rng: np.random.Generator) -> PathSet:
    """LoS path plus up to ``max_reflections`` strongest single bounces.

    Gains follow the free-space amplitude law sqrt(P)·λ/(4πd) with a random
    phase per path; delays are measured from the LoS arrival.
    """
    lam = SPEED_OF_LIGHT / spec.carrier_hz
    az, el, d_los = _angles(rx3, tx3)
    amp = lambda d: math.sqrt(spec.tx_power) * lam / (4 * math.pi * max(d, 1e-3))  # noqa: E731
    rows = [(amp(d_los), d_los, az, el)]
    bounces = sorted(reflection_points(rx3, tx3, spec.obstacles), key=lambda b: b[1])
    for p, length in bounces[: spec.max_reflections]:
        baz, bel, _ = _angles(rx3, p)
        rows.append((spec.reflection_coeff * amp(length), length, baz, bel))
    phases = rng.uniform(0, 2 * math.pi, len(rows))
    paths = tuple(
        Path(gain=a * complex(math.cos(ph), math.sin(ph)), delay=(d - d_los) / SPEED_OF_LIGHT, azimuth=pa, elevation=pe)
        for (a, d, pa, pe), ph in zip(rows, phases)
    )
    return PathSet(paths, spec.cyclic_prefix_len, spec.n_subcarriers, spec.symbol_period, spec.pulse_kind)


# --- sensors ---------------------------------------------------------------

def emulate_gps(true_position, noise_std: float, seed, cfg: GpsConfig = GpsConfig()) -> tuple[float, float]:
    """Local east/north meters -> (lat, lon) degrees around the anchor, plus noise."""
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    x, y = map(float, true_position)
    if noise_std > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        x, y = x + rng.normal(0, noise_std), y + rng.normal(0, noise_std)
    lat = cfg.anchor_lat + math.degrees(y / EARTH_RADIUS)
    coslat = max(math.cos(math.radians(cfg.anchor_lat)), 1e-12)
    lon = cfg.anchor_lon + math.degrees(x / (EARTH_RADIUS * coslat))
    lon = (lon + 180.0) % 360.0 - 180.0
    return lat, lon


def gps_to_local(lat, lon, cfg: GpsConfig = GpsConfig()):
    """Inverse of the noise-free ``emulate_gps`` conversion (east, north meters)."""
    dlon = (np.asarray(lon, float) - cfg.anchor_lon + 180.0) % 360.0 - 180.0
    coslat = max(math.cos(math.radians(cfg.anchor_lat)), 1e-12)
    x = np.radians(dlon) * EARTH_RADIUS * coslat
    y = np.radians(np.asarray(lat, float) - cfg.anchor_lat) * EARTH_RADIUS
    return x, y


def ray_box_hits(origin, dirs, boxes) -> np.ndarray:
    """Slab-test distance to the nearest box along each ray; inf on a miss."""
    dirs = np.asarray(dirs, float)
    best = np.full(len(dirs), np.inf)
    if len(boxes) == 0:
        return best
    b = np.asarray(boxes, float)
    lo, hi = b[:, :3], b[:, 3:]
    safe = np.where(dirs == 0, 1e-300, dirs)
    inv = 1.0 / safe  # (R, 3)
    with np.errstate(over="ignore", invalid="ignore"):
        t1 = (lo[None] - origin) * inv[:, None]  # (R, B, 3)
        t2 = (hi[None] - origin) * inv[:, None]
    t_near = np.minimum(t1, t2).max(axis=2)
    t_far = np.maximum(t1, t2).min(axis=2)
    hit = (t_near <= t_far) & (t_near > 0)
    t = np.where(hit, t_near, np.inf)
    return np.minimum(best, t.min(axis=1))


def ray_directions(cfg: LidarConfig, rng: np.random.Generator) -> np.ndarray:
    az = rng.uniform(-cfg.fan / 2, cfg.fan / 2, cfg.rays)
    el = rng.uniform(*cfg.elevation_range, cfg.rays)
    return np.stack([np.sin(az) * np.cos(el), np.cos(az) * np.cos(el), np.sin(el)], axis=1)


def emulate_pointcloud(obstacles, tx_pose: Box | None, rx_pose, rays: int | None = None, seed=0,
                       cfg: LidarConfig = LidarConfig()) -> np.ndarray:
    """First-hit ray cast from the receiver sensor at ``rx_pose`` (x, y, z).

    ``tx_pose`` is the transmitter vehicle's bounding box. Rays that hit
    nothing within range (and no ground, if enabled) return no point.
    """
    if rays is not None:
        cfg = LidarConfig(rays=rays, fan=cfg.fan, elevation_range=cfg.elevation_range,
                          max_range=cfg.max_range, ground=cfg.ground)
    if cfg.rays < 1:
        raise ValueError("rays must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    origin = np.asarray(rx_pose, float)
    dirs = ray_directions(cfg, rng)
    boxes = list(obstacles) + ([tx_pose] if tx_pose is not None else [])
    t = ray_box_hits(origin, dirs, boxes)
    if cfg.ground:
        with np.errstate(divide="ignore"):
            tg = np.where(dirs[:, 2] < 0, -origin[2] / np.where(dirs[:, 2] < 0, dirs[:, 2], -1.0), np.inf)
        t = np.minimum(t, np.where(tg > 0, tg, np.inf))
    keep = t <= cfg.max_range
    pts = origin + t[keep, None] * dirs[keep]
    if cfg.ground:
        on_ground = np.isclose(pts[:, 2], 0.0, atol=1e-9)
        pts[on_ground, 2] = 0.0
    return pts.astype(np.float32)


def emulate_image(obstacles, tx_position, rx_position, width: int | None = None, height: int | None = None,
                  cfg: CameraConfig = CameraConfig(), tx_size=(4.5, 1.8, 1.5)) -> np.ndarray:
    """Top-down orthographic raster (height, width, 3) uint8.

    Columns map x (centered on the receiver), rows map y with row 0 the far
    edge. Channel 0 is obstacle occupancy, channel 1 a Gaussian blob at the
    transmitter, channel 2 the range from the receiver over occupied cells.
    """
    w = cfg.width if width is None else width
    h = cfg.height if height is None else height
    if w < 8 or h < 8:
        raise ValueError("image must be at least 8x8")
    rx, ry = float(rx_position[0]), float(rx_position[1])
    sx, sy = cfg.view_width / w, cfg.view_depth / h
    xs = rx - cfg.view_width / 2 + (np.arange(w) + 0.5) * sx
    ys = ry + cfg.view_depth - (np.arange(h) + 0.5) * sy
    gx, gy = np.meshgrid(xs, ys)
    occ = np.zeros((h, w), bool)
    for xmin, ymin, _, xmax, ymax, _ in obstacles:
        occ |= (gx >= xmin) & (gx <= xmax) & (gy >= ymin) & (gy <= ymax)
    tx, ty = float(tx_position[0]), float(tx_position[1])
    blob = np.exp(-((gx - tx) ** 2 + (gy - ty) ** 2) / (2 * cfg.blob_sigma ** 2))
    veh = (np.abs(gx - tx) <= tx_size[0] / 2) & (np.abs(gy - ty) <= tx_size[1] / 2)
    rng_map = np.clip(1.0 - np.hypot(gx - rx, gy - ry) / cfg.max_range, 0.0, 1.0) * (occ | veh)
    img = np.stack([occ.astype(float), blob, rng_map], axis=2)
    return np.round(img * 255).astype(np.uint8)


# --- generation ------------------------------------------------------------

def _sample_geometry(spec: ScenarioSpec, i: int, rng: np.random.Generator):
    t = i * spec.sample_interval
    dist = spec.speed * t
    base = position_on_path(spec.waypoints, dist)
    heading = _path_heading(spec.waypoints, dist)
    normal = np.array([-heading[1], heading[0]])
    tx_xy = base + normal * rng.normal(0, spec.position_jitter) if spec.position_jitter > 0 else base
    rx_xy = np.asarray(spec.receiver_position, float)
    if spec.kind == "V2V":
        period = _path_length(spec.waypoints) / spec.speed if spec.speed > 0 else 0.0
        t_rx = t % period if period > 0 else t
        rx_xy = rx_xy + np.asarray(spec.receiver_velocity, float) * t_rx
    return t, tx_xy, rx_xy


def generate_sample(spec: ScenarioSpec, i: int, array: ArrayConfig, cb: Codebook):
    geo_rng = substream(spec.seed, "geometry", i)
    phase_rng = substream(spec.seed, "phase", i)
    t, tx_xy, rx_xy = _sample_geometry(spec, i, geo_rng)
    rx3 = np.array([rx_xy[0], rx_xy[1], spec.receiver_height])
    tx3 = np.array([tx_xy[0], tx_xy[1], spec.tx_height])
    ps = build_pathset(spec, rx3, tx3, phase_rng)
    los = ps.paths[0]
    covered = abs(los.azimuth) <= math.pi / 2
    if not covered:
        warnings.warn(f"sample {i}: azimuth {los.azimuth:.3f} rad outside the codebook span", CoverageWarning)
    profile = power_profile(realize_channel(array, ps), cb)
    if spec.measurement_noise > 0:
        profile = simulate_measurement(profile, NoiseConfig(spec.measurement_noise, subseed(spec.seed, "noise", i)))
    gps = emulate_gps(tx_xy, spec.gps.noise_std, substream(spec.seed, "gps", i), spec.gps)
    box = tx_box(tx_xy, spec.tx_size)
    cloud = emulate_pointcloud(spec.obstacles, box, rx3, seed=substream(spec.seed, "lidar", i), cfg=spec.lidar)
    image = emulate_image(spec.obstacles, tx_xy, rx_xy, cfg=spec.camera, tx_size=spec.tx_size)
    sample = Sample(
        seq=i,
        timestamp=round(t, 9),
        gps=gps,
        image=image,
        cloud=cloud,
        power_profile=profile,
        best_beam=optimal_beam(profile),
    )
    geom = SampleGeometry(tuple(map(float, tx_xy)), tuple(map(float, rx_xy)), los.azimuth, los.elevation,
                          ps.n_paths, covered)
    return sample, geom


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("BEAM_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def generate_scenario(spec: ScenarioSpec, array: ArrayConfig, cb: Codebook, workers: int | None = None) -> Dataset:
    """Deterministic labeled dataset; output does not depend on ``workers``."""
    if cb.n_elements != array.n_elements:
        raise ValueError("codebook and array disagree on element count")
    workers = worker_count() if workers is None else max(1, workers)
    idx = range(spec.n_samples)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda i: generate_sample(spec, i, array, cb), idx))
    else:
        results = [generate_sample(spec, i, array, cb) for i in idx]
    samples = [s for s, _ in results]
    geometry = [g for _, g in results]
    meta = {
        "kind": spec.kind,
        "n_samples": spec.n_samples,
        "carrier_hz": spec.carrier_hz,
        "tx_power_w": spec.tx_power,
        "receiver_position_m": list(spec.receiver_position),
        "sample_interval_s": spec.sample_interval,
        "out_of_coverage": int(sum(not g.in_coverage for g in geometry)),
    }
    return Dataset(samples, split_indices(spec.n_samples, spec.seed), cb.n_beams, array.n_elements,
                   spec.seed, meta, geometry)
