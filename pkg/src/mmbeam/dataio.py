"""Dataset files on disk and preprocessing into fixed-shape model inputs.

Layout of a dataset directory::

    index.csv      seq,timestamp,lat,lon,img_path,cloud_path,power_1..power_Q,best_beam
    manifest.json  |Q|, N_R, seed, units, split membership
    images/        binary PPM (P6) rasters
    clouds/        uint64 LE point count, then float32 LE (x, y, z) triplets
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ChannelError, DegenerateRange, MissingArtifact, NonMonotonicTime, SchemaError, UpscaleWarning
from .models.fusion import ModelInputs
from .scenario import Dataset, Sample, split_indices
from .seeding import substream

IMAGE_MEAN = np.array([0.485, 0.456, 0.406])
IMAGE_STD = np.array([0.229, 0.224, 0.225])
IMAGE_SIZE = 224
POINT_COUNT = 15000
FIXED_COLUMNS = ["seq", "timestamp", "lat", "lon", "img_path", "cloud_path"]


# --- artifacts -------------------------------------------------------------

def write_ppm(path, image: np.ndarray):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ChannelError(f"PPM needs an (h, w, 3) uint8 raster, got {image.shape} {image.dtype}")
    h, w, _ = image.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise SchemaError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return pixels.reshape(h, w, 3).copy()


def write_cloud(path, cloud: np.ndarray):
    pts = np.ascontiguousarray(np.asarray(cloud, dtype="<f4").reshape(-1, 3))
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(pts)))
        f.write(pts.tobytes())


def read_cloud(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise SchemaError(f"{path}: truncated point cloud header")
    (n,) = struct.unpack("<Q", data[:8])
    if len(data) != 8 + 12 * n:
        raise SchemaError(f"{path}: header says {n} points, payload holds {(len(data) - 8) / 12}")
    return np.frombuffer(data, dtype="<f4", offset=8).reshape(n, 3).astype(np.float32)


# --- index + manifest ------------------------------------------------------

def save_dataset(ds: Dataset, path) -> Path:
    """Write ``ds`` under directory ``path``; returns the index path."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "clouds").mkdir(parents=True, exist_ok=True)
    header = FIXED_COLUMNS + [f"power_{i}" for i in range(1, ds.n_beams + 1)] + ["best_beam"]
    index = root / "index.csv"
    with open(index, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for s in ds.samples:
            img_rel, cloud_rel = f"images/{s.seq:06d}.ppm", f"clouds/{s.seq:06d}.bin"
            write_ppm(root / img_rel, s.image)
            write_cloud(root / cloud_rel, s.cloud)
            w.writerow([s.seq, repr(float(s.timestamp)), repr(float(s.gps[0])), repr(float(s.gps[1])),
                        img_rel, cloud_rel, *[repr(float(p)) for p in s.power_profile], s.best_beam])
    manifest = {
        "n_beams": ds.n_beams,
        "n_elements": ds.n_elements,
        "seed": ds.seed,
        "units": {"timestamp": "s", "lat": "deg", "lon": "deg", "power": "W", "cloud": "m"},
        "splits": {k: [int(i) for i in v] for k, v in ds.splits.items()},
        "scenario": ds.meta,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return index


def _parse_float(value, row, column):
    try:
        return float(value)
    except ValueError:
        raise SchemaError(f"row {row}: column {column} is not a number: {value!r}") from None


def load_index(path) -> Dataset:
    """Load an index CSV (or a directory containing ``index.csv``).

    Artifact paths are resolved relative to the index file. Without a
    manifest, |Q| comes from the header and a seed-0 split is assigned.
    """
    path = Path(path)
    index = path / "index.csv" if path.is_dir() else path
    root = index.parent
    manifest_path = root / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    with open(index, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise SchemaError(f"{index}: empty index")
    header = rows[0]
    if header[:6] != FIXED_COLUMNS or header[-1] != "best_beam":
        raise SchemaError(f"{index}: unexpected header {header[:6]}...{header[-1:]}")
    power_cols = header[6:-1]
    n_beams = int(manifest.get("n_beams", len(power_cols)))
    if len(power_cols) != n_beams:
        raise SchemaError(f"header has {len(power_cols)} power columns, manifest says {n_beams}")
    samples = []
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            got = len(row) - len(FIXED_COLUMNS) - 1
            raise SchemaError(f"row {r}: {got} power values, expected {n_beams}")
        img_path, cloud_path = root / row[4], root / row[5]
        if not img_path.exists():
            raise MissingArtifact(r, "img_path", str(img_path))
        if not cloud_path.exists():
            raise MissingArtifact(r, "cloud_path", str(cloud_path))
        powers = np.array([_parse_float(v, r, c) for v, c in zip(row[6:-1], power_cols)])
        best = int(row[-1])
        if not 1 <= best <= n_beams:
            raise SchemaError(f"row {r}: best_beam {best} outside 1..{n_beams}")
        samples.append(Sample(
            seq=int(row[0]),
            timestamp=_parse_float(row[1], r, "timestamp"),
            gps=(_parse_float(row[2], r, "lat"), _parse_float(row[3], r, "lon")),
            image=read_ppm(img_path),
            cloud=read_cloud(cloud_path),
            power_profile=powers,
            best_beam=best,
        ))
    times = np.array([s.timestamp for s in samples])
    monotonic = bool(np.all(np.diff(times) >= 0)) if len(times) > 1 else True
    if not monotonic:
        warnings.warn(f"{index}: timestamps are not sorted; file order kept", NonMonotonicTime)
    seed = int(manifest.get("seed", 0))
    if "splits" in manifest:
        splits = {k: np.asarray(v, dtype=int) for k, v in manifest["splits"].items()}
    else:
        splits = split_indices(len(samples), seed)
    return Dataset(samples, splits, n_beams, int(manifest.get("n_elements", 0)), seed,
                   manifest.get("scenario", {}), time_monotonic=monotonic)


# --- preprocessing ---------------------------------------------------------

@dataclass(frozen=True)
class NormalizationStats:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise DegenerateRange(f"degenerate position range {self}")

    @classmethod
    def from_positions(cls, gps) -> "NormalizationStats":
        g = np.asarray(gps, dtype=float).reshape(-1, 2)
        if len(g) == 0:
            raise DegenerateRange("no positions to compute stats from")
        return cls(float(g[:, 0].min()), float(g[:, 0].max()), float(g[:, 1].min()), float(g[:, 1].max()))

    @classmethod
    def from_training(cls, ds: Dataset) -> "NormalizationStats":
        """Stats from the training split only."""
        return cls.from_positions([ds.samples[i].gps for i in ds.splits["train"]])

    def to_dict(self):
        return {"lat_min": self.lat_min, "lat_max": self.lat_max, "lon_min": self.lon_min, "lon_max": self.lon_max}


def normalize_position(raw, stats: NormalizationStats) -> np.ndarray:
    """Min-max scale (lat, lon) into [0, 1]², clamping positions outside the range."""
    if not (stats.lat_max > stats.lat_min and stats.lon_max > stats.lon_min):
        raise DegenerateRange(f"degenerate position range {stats}")
    raw = np.asarray(raw, dtype=float)
    lo = np.array([stats.lat_min, stats.lon_min])
    hi = np.array([stats.lat_max, stats.lon_max])
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize of an (h, w, c) array; identity at equal size."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis(n_in, n_out):
        src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    fy, fx = fy[:, None, None], fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def normalize_image(raw: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Resize to size×size, scale to [0, 1], standardize with the ImageNet constants."""
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ChannelError(f"expected an (h, w, 3) raster, got shape {raw.shape}")
    h, w = raw.shape[:2]
    if h < size or w < size:
        warnings.warn(f"upscaling {w}x{h} image to {size}x{size}", UpscaleWarning)
    img = resize_bilinear(raw, size, size) / 255.0
    return (img - IMAGE_MEAN) / IMAGE_STD


def fix_pointcount(cloud, target: int = POINT_COUNT, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Subsample (without replacement) or zero-pad to exactly ``target`` rows.

    Returns (points (target, 3), mask) with mask True on real points.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    n = len(cloud)
    if n > target:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        keep = np.sort(rng.choice(n, size=target, replace=False))
        return cloud[keep].copy(), np.ones(target, bool)
    out = np.zeros((target, 3))
    out[:n] = cloud
    mask = np.zeros(target, bool)
    mask[:n] = True
    return out, mask


@dataclass(frozen=True)
class PreprocessConfig:
    image_size: int = IMAGE_SIZE
    n_points: int = POINT_COUNT
    cloud_scale: float = 1.0  # multiplies point coordinates (meters) before the network


@dataclass
class PreprocessedSample:
    pos: np.ndarray  # (2,) in [0, 1]
    vis: np.ndarray  # (size, size, 3)
    cloud_points: np.ndarray  # (n_points, 3)
    cloud_mask: np.ndarray  # (n_points,)
    label: int  # 1-based beam index


def preprocess_sample(s: Sample, stats: NormalizationStats, cfg: PreprocessConfig = PreprocessConfig(),
                      seed: int = 0) -> PreprocessedSample:
    pts, mask = fix_pointcount(s.cloud, cfg.n_points, substream(seed, "points", s.seq))
    return PreprocessedSample(
        pos=normalize_position(s.gps, stats),
        vis=normalize_image(s.image, cfg.image_size),
        cloud_points=pts * cfg.cloud_scale,
        cloud_mask=mask,
        label=s.best_beam,
    )


def stack_inputs(samples: list[PreprocessedSample], modalities=("pos", "vis", "lid")) -> ModelInputs:
    """Batch preprocessed samples into channel-first ModelInputs."""
    if not samples:
        return ModelInputs()
    pos = np.stack([p.pos for p in samples]) if "pos" in modalities else None
    vis = np.stack([p.vis for p in samples]).transpose(0, 3, 1, 2).copy() if "vis" in modalities else None
    if "lid" in modalities:
        cloud = np.stack([p.cloud_points for p in samples])
        mask = np.stack([p.cloud_mask for p in samples])
    else:
        cloud = mask = None
    return ModelInputs(pos, vis, cloud, mask)


@dataclass
class SplitArrays:
    inputs: ModelInputs
    labels: np.ndarray  # 0-based class indices
    profiles: np.ndarray  # (n, |Q|)


def preprocess_split(ds: Dataset, name: str, stats: NormalizationStats, cfg: PreprocessConfig = PreprocessConfig(),
                     modalities=("pos", "vis", "lid"), seed: int = 0) -> SplitArrays:
    with warnings.catch_warnings():
        # one warning per split is enough
        warnings.simplefilter("once", UpscaleWarning)
        pre = [preprocess_sample(ds.samples[i], stats, cfg, seed) for i in ds.splits[name]]
    labels = np.array([p.label - 1 for p in pre], dtype=int)
    profiles = np.array([ds.samples[i].power_profile for i in ds.splits[name]]).reshape(-1, ds.n_beams)
    return SplitArrays(stack_inputs(pre, modalities), labels, profiles)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_checksums(root) -> dict[str, str]:
    """sha256 of every file under ``root`` keyed by relative POSIX path."""
    root = Path(root)
    out = {}
    for dirpath, _, files in sorted(os.walk(root)):
        for fn in sorted(files):
            p = Path(dirpath) / fn
            out[p.relative_to(root).as_posix()] = file_sha256(p)
    return dict(sorted(out.items()))
