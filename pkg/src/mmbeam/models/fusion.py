"""Concatenation fusion of the modality features and the top-M beam head."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import RangeError, ShapeError
from ..nn import functional as F
from ..nn.layers import Dense, Module, ReLU
from ..seeding import substream
from .extractors import (
    PointNetLite,
    PointNetLiteConfig,
    PositionNet,
    PositionNetConfig,
    VisualNet,
    VisualNetConfig,
)

MODALITIES = ("pos", "vis", "lid")


@dataclass(frozen=True)
class FusionHeadConfig:
    hidden: int = 256
    zero_init_output: bool = True  # all-zero logits before training


@dataclass(frozen=True)
class BeamModelConfig:
    n_beams: int = 64
    modalities: tuple[str, ...] = MODALITIES
    position: PositionNetConfig = field(default_factory=PositionNetConfig)
    pointnet: PointNetLiteConfig = field(default_factory=PointNetLiteConfig)
    visual: VisualNetConfig = field(default_factory=VisualNetConfig)
    head: FusionHeadConfig = field(default_factory=FusionHeadConfig)

    def __post_init__(self):
        mods = tuple(m for m in MODALITIES if m in self.modalities)
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        if not mods:
            raise ValueError("at least one modality must be enabled")
        object.__setattr__(self, "modalities", mods)

    def with_modalities(self, modalities) -> "BeamModelConfig":
        return replace(self, modalities=tuple(modalities))


@dataclass
class ModelInputs:
    """Batched model inputs; ``vis`` is channel-first (N, 3, H, W)."""

    pos: np.ndarray | None = None
    vis: np.ndarray | None = None
    cloud: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __len__(self):
        for a in (self.pos, self.vis, self.cloud):
            if a is not None:
                return a.shape[0]
        return 0

    def take(self, idx) -> "ModelInputs":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return ModelInputs(pick(self.pos), pick(self.vis), pick(self.cloud), pick(self.mask))


class BeamPredictor(Module):
    """Modality extractors -> concat -> FC1 + ReLU -> FC2 (logits over |Q| beams)."""

    def __init__(self, cfg: BeamModelConfig = BeamModelConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = substream(seed, "init")
        dims = []
        if "pos" in cfg.modalities:
            self.pos_net = PositionNet(cfg.position, rng)
            dims.append(self.pos_net.out_dim)
        if "vis" in cfg.modalities:
            self.vis_net = VisualNet(cfg.visual, rng)
            dims.append(self.vis_net.out_dim)
        if "lid" in cfg.modalities:
            self.lid_net = PointNetLite(cfg.pointnet, rng)
            dims.append(self.lid_net.out_dim)
        self.dims = dims
        self.concat_dim = sum(dims)
        self.fc1 = Dense(self.concat_dim, cfg.head.hidden, rng)
        self.act = ReLU()
        self.fc2 = Dense(cfg.head.hidden, cfg.n_beams, None if cfg.head.zero_init_output else rng,
                         init="zero" if cfg.head.zero_init_output else "fan_in")

    def features(self, x: ModelInputs, train=True) -> list[np.ndarray]:
        feats = []
        for m in self.cfg.modalities:
            if m == "pos":
                if x.pos is None:
                    raise ShapeError("model expects position input")
                feats.append(self.pos_net.forward(x.pos, train))
            elif m == "vis":
                if x.vis is None:
                    raise ShapeError("model expects image input")
                feats.append(self.vis_net.forward(x.vis, train))
            else:
                if x.cloud is None or x.mask is None:
                    raise ShapeError("model expects point cloud and mask input")
                self._cloud_shape, self._mask = x.cloud.shape, np.asarray(x.mask, bool)
                feats.append(self.lid_net.forward(x.cloud, x.mask, train))
        n = {f.shape[0] for f in feats}
        if len(n) != 1:
            raise ShapeError(f"modalities disagree on batch size: {sorted(n)}")
        return feats

    def forward(self, x: ModelInputs, train=True):
        chi = np.concatenate(self.features(x, train), axis=1)
        return self.fc2.forward(self.act.forward(self.fc1.forward(chi, train), train), train)

    def backward(self, dlogits):
        dchi = self.fc1.backward(self.act.backward(self.fc2.backward(dlogits)))
        grads = {}
        start = 0
        for m, d in zip(self.cfg.modalities, self.dims):
            part = dchi[:, start:start + d]
            start += d
            if m == "pos":
                grads["pos"] = self.pos_net.backward(part)
            elif m == "vis":
                grads["vis"] = self.vis_net.backward(part)
            else:
                packed = self.lid_net.backward(part)
                full = np.zeros(self._cloud_shape)
                full[self._mask] = packed
                grads["lid"] = full
        return grads


def predict(model: BeamPredictor, x: ModelInputs) -> np.ndarray:
    """Beam probabilities (N, |Q|) in inference mode."""
    return F.softmax(model.forward(x, train=False), axis=1)


def top_m(probs, m: int) -> list[int]:
    """1-based indices of the M most probable beams, best first; ties to the lower index."""
    probs = np.asarray(probs, dtype=float)
    if not 1 <= m <= probs.shape[-1]:
        raise RangeError(f"M={m} outside 1..{probs.shape[-1]}")
    order = np.argsort(-probs, kind="stable")[:m]
    return [int(i) + 1 for i in order]


def rank_beams(probs) -> np.ndarray:
    """Row-wise 1-based beam ranking, best first (stable on ties)."""
    return np.argsort(-np.asarray(probs, dtype=float), axis=1, kind="stable") + 1
