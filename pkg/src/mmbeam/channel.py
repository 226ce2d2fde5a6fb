"""ULA codebooks, geometric OFDM channels and per-beam received power.

Conventions: the array axis is local x, broadside is local +y. Azimuth is
measured from broadside (positive toward +x), elevation from the horizontal
plane. Beam indices handed out of this module are 1-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInput, ShapeError, UndersampledCodebook


@dataclass(frozen=True)
class ArrayConfig:
    n_elements: int = 16
    element_spacing: float = 0.5  # wavelengths

    def __post_init__(self):
        if int(self.n_elements) < 1:
            raise ValueError(f"n_elements must be >= 1, got {self.n_elements}")
        if not self.element_spacing > 0:
            raise ValueError(f"element_spacing must be > 0, got {self.element_spacing}")


@dataclass(frozen=True)
class Codebook:
    """Beam-weight table; row ``i`` is beam ``i + 1``."""

    beams: np.ndarray  # (|Q|, N_R) complex
    spatial_freqs: np.ndarray | None = None

    def __post_init__(self):
        beams = np.asarray(self.beams, dtype=complex)
        if beams.ndim != 2 or beams.shape[0] < 1:
            raise ShapeError(f"codebook must be a non-empty (|Q|, N_R) table, got {beams.shape}")
        object.__setattr__(self, "beams", beams)

    @property
    def n_beams(self) -> int:
        return self.beams.shape[0]

    @property
    def n_elements(self) -> int:
        return self.beams.shape[1]

    @property
    def beam_indices(self) -> np.ndarray:
        return np.arange(1, self.n_beams + 1)


@dataclass(frozen=True)
class Path:
    gain: complex
    delay: float  # seconds
    azimuth: float  # radians
    elevation: float = 0.0


@dataclass(frozen=True)
class PathSet:
    paths: tuple[Path, ...]
    cyclic_prefix_len: int = 1
    n_subcarriers: int = 8
    symbol_period: float = 20e-9
    pulse_kind: str = "sinc"

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if len(self.paths) < 1:
            raise ValueError("a PathSet needs at least one path")
        if self.cyclic_prefix_len < 1 or self.n_subcarriers < 1:
            raise ValueError("cyclic_prefix_len and n_subcarriers must be >= 1")
        if any(p.delay < 0 for p in self.paths):
            raise ValueError("path delays must be non-negative")
        if self.pulse_kind not in ("sinc", "rect"):
            raise ValueError(f"unknown pulse kind {self.pulse_kind!r}")

    @property
    def n_paths(self) -> int:
        return len(self.paths)


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray  # (N, N_R) complex, one row per subcarrier
    source: PathSet | None = None


@dataclass(frozen=True)
class NoiseConfig:
    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("noise variance must be >= 0")


def spatial_frequency(azimuth, elevation=0.0):
    return np.sin(azimuth) * np.cos(elevation)


def steering_vector(cfg: ArrayConfig, azimuth: float, elevation: float = 0.0) -> np.ndarray:
    k = np.arange(cfg.n_elements)
    u = spatial_frequency(azimuth, elevation)
    return np.exp(-2j * np.pi * cfg.element_spacing * k * u) / math.sqrt(cfg.n_elements)


def steering_matrix(cfg: ArrayConfig, azimuths, elevations) -> np.ndarray:
    """Stacked steering vectors, one row per (azimuth, elevation) pair."""
    u = spatial_frequency(np.asarray(azimuths, float), np.asarray(elevations, float))
    k = np.arange(cfg.n_elements)
    return np.exp(-2j * np.pi * cfg.element_spacing * np.outer(u, k)) / math.sqrt(cfg.n_elements)


def make_dft_codebook(cfg: ArrayConfig, n_beams: int) -> Codebook:
    """Oversampled DFT codebook on spatial frequencies -1 + 2i/|Q|, i = 0..|Q|-1."""
    if n_beams < cfg.n_elements:
        raise UndersampledCodebook(
            f"{n_beams} beams cannot cover a {cfg.n_elements}-element array"
        )
    u = -1.0 + 2.0 * np.arange(n_beams) / n_beams
    k = np.arange(cfg.n_elements)
    a = np.exp(-2j * np.pi * cfg.element_spacing * np.outer(u, k)) / math.sqrt(cfg.n_elements)
    return Codebook(np.conj(a), spatial_freqs=u)


def pulse(t, symbol_period: float, kind: str = "sinc"):
    t = np.asarray(t, dtype=float)
    if kind == "sinc":
        return np.sinc(t / symbol_period)
    if kind == "rect":
        return (np.abs(t) < symbol_period / 2).astype(float)
    raise ValueError(f"unknown pulse kind {kind!r}")


def _subcarrier_factor(n, n_subcarriers: int, cp_len: int):
    c = np.arange(cp_len)
    return np.exp(-2j * np.pi * np.outer(np.atleast_1d(n), c) / n_subcarriers).sum(axis=1)


def channel_vector(cfg: ArrayConfig, ps: PathSet, subcarrier_n: int, symbol_m: int = 0) -> np.ndarray:
    if not 0 <= subcarrier_n < ps.n_subcarriers:
        raise IndexError(f"subcarrier {subcarrier_n} outside 0..{ps.n_subcarriers - 1}")
    return realize_channel(cfg, ps, symbol_m).h[subcarrier_n]


def realize_channel(cfg: ArrayConfig, ps: PathSet, symbol_m: int = 0) -> ChannelRealization:
    gains = np.array([p.gain for p in ps.paths], dtype=complex)
    delays = np.array([p.delay for p in ps.paths], dtype=float)
    a = steering_matrix(cfg, [p.azimuth for p in ps.paths], [p.elevation for p in ps.paths])
    weights = gains * pulse(symbol_m * ps.symbol_period - delays, ps.symbol_period, ps.pulse_kind)
    spatial = weights @ a  # (N_R,)
    f = _subcarrier_factor(np.arange(ps.n_subcarriers), ps.n_subcarriers, ps.cyclic_prefix_len)
    h = math.sqrt(cfg.n_elements) * np.outer(f, spatial)
    return ChannelRealization(h=h, source=ps)


def received_power(h, beam, symbol_energy: float = 1.0) -> float:
    h = np.asarray(h)
    beam = np.asarray(beam)
    if h.shape != beam.shape or h.ndim != 1:
        raise ShapeError(f"channel {h.shape} and beam {beam.shape} do not match")
    return float(abs(h @ beam) ** 2 * symbol_energy)


def power_profile(ch: ChannelRealization | np.ndarray, cb: Codebook, symbol_energy: float = 1.0) -> np.ndarray:
    h = ch.h if isinstance(ch, ChannelRealization) else np.asarray(ch)
    h = np.atleast_2d(h)
    if h.shape[1] != cb.n_elements:
        raise ShapeError(f"channel has {h.shape[1]} elements, codebook expects {cb.n_elements}")
    return (np.abs(h @ cb.beams.T) ** 2).sum(axis=0) * symbol_energy


def optimal_beam(profile: Sequence[float]) -> int:
    """1-based argmax; ties go to the lowest index."""
    profile = np.asarray(profile, dtype=float)
    if profile.size == 0:
        raise EmptyInput("empty power profile")
    return int(np.argmax(profile)) + 1


def simulate_measurement(profile, noise: NoiseConfig) -> np.ndarray:
    profile = np.asarray(profile, dtype=float)
    if noise.variance == 0:
        return profile.copy()
    rng = np.random.default_rng(noise.seed)
    scale = math.sqrt(noise.variance / 2)
    w = rng.normal(0, scale, profile.shape) + 1j * rng.normal(0, scale, profile.shape)
    return profile + np.abs(w) ** 2
