"""Per-modality feature extractors: position ConvNet, PointNet-lite, MBConv CNN."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import AllMasked, ShapeError
from ..nn import functional as F
from ..nn.layers import (
    BatchNorm,
    Conv1d,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Flatten,
    GlobalAvgPool2d,
    MaxPool1d,
    Module,
    ReLU,
    Sequential,
    Sigmoid,
    SiLU,
)


# --- position --------------------------------------------------------------

@dataclass(frozen=True)
class PositionNetConfig:
    channels: tuple[int, ...] = (16, 32, 64)
    convs_per_block: int = 3
    kernel: int = 3
    pool_window: int = 2
    batchnorm: bool = True  # conv -> BN -> ReLU inside each block


class PositionNet(Module):
    """Three ConvNet blocks (convs + max pool) over the (lat, lon) pair, then flatten.

    The input is a length-2 sequence with one channel. Pools use ceil mode so
    the sequence never shrinks below one position.
    """

    def __init__(self, cfg: PositionNetConfig = PositionNetConfig(), rng=None):
        super().__init__()
        self.cfg = cfg
        layers = []
        c_in = 1
        length = 2
        for c_out in cfg.channels:
            for _ in range(cfg.convs_per_block):
                layers.append(Conv1d(c_in, c_out, cfg.kernel, padding=cfg.kernel // 2, rng=rng))
                if cfg.batchnorm:
                    layers.append(BatchNorm(c_out))
                layers.append(ReLU())
                c_in = c_out
            layers.append(MaxPool1d(cfg.pool_window, ceil_mode=True))
            length = max(1, -(-(length - cfg.pool_window) // cfg.pool_window) + 1) if length >= cfg.pool_window else 1
        layers.append(Flatten())
        self.net = Sequential(*layers)
        self.out_dim = c_in * length

    def forward(self, pos, train=True):
        pos = np.asarray(pos, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ShapeError(f"position input must be (N, 2), got {pos.shape}")
        return self.net.forward(pos[:, None, :], train)

    def backward(self, g):
        return self.net.backward(g)[:, 0, :]


# --- point cloud -----------------------------------------------------------

@dataclass(frozen=True)
class PointNetLiteConfig:
    mlp1: tuple[int, ...] = (64, 64)
    mlp2: tuple[int, ...] = (64, 128, 1024)
    tnet_widths: tuple[int, ...] = (64, 128)
    input_tnet: bool = True
    feature_tnet: bool = True


def _shared_mlp(widths, c_in, rng):
    layers = []
    for w in widths:
        layers += [Dense(c_in, w, rng), ReLU()]
        c_in = w
    return Sequential(*layers)


class TNet(Module):
    """Predicts a k x k transform per point set; starts at the identity."""

    def __init__(self, k, widths, rng):
        super().__init__()
        self.k = k
        self.mlp = _shared_mlp(widths, k, rng)
        self.fc = Dense(widths[-1], k * k, init="zero")

    def forward(self, pts, offsets, train=True):
        f = self.mlp.forward(pts, train)
        self._n_rows = f.shape[0]
        pooled, self._arg = F.segment_max(f, offsets)
        t = self.fc.forward(pooled, train).reshape(-1, self.k, self.k)
        return t + np.eye(self.k)

    def backward(self, dt):
        dpooled = self.fc.backward(dt.reshape(dt.shape[0], -1))
        df = F.segment_max_backward(dpooled, self._arg, self._n_rows)
        return self.mlp.backward(df)


def _apply_transform(x, t, offsets):
    out = np.empty_like(x)
    for s in range(len(offsets) - 1):
        a, b = offsets[s], offsets[s + 1]
        out[a:b] = x[a:b] @ t[s]
    return out


def _apply_transform_backward(dy, x, t, offsets):
    dx = np.empty_like(x)
    dt = np.empty_like(t)
    for s in range(len(offsets) - 1):
        a, b = offsets[s], offsets[s + 1]
        dx[a:b] = dy[a:b] @ t[s].T
        dt[s] = x[a:b].T @ dy[a:b]
    return dx, dt


def pack_points(cloud, mask):
    """Real points of every set stacked row-wise, plus segment offsets."""
    cloud = np.asarray(cloud, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if cloud.ndim != 3 or cloud.shape[2] != 3 or mask.shape != cloud.shape[:2]:
        raise ShapeError(f"cloud {cloud.shape} / mask {mask.shape} must be (N, P, 3) / (N, P)")
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise AllMasked("a point cloud has no unmasked points")
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return cloud[mask], offsets


class PointNetLite(Module):
    """Input T-net, shared MLP, feature T-net, shared MLP, masked global max pool.

    Only unmasked points are pushed through the per-point layers, so padded
    rows cannot influence the output.
    """

    def __init__(self, cfg: PointNetLiteConfig = PointNetLiteConfig(), rng=None):
        super().__init__()
        self.cfg = cfg
        if cfg.input_tnet:
            self.tnet_in = TNet(3, cfg.tnet_widths, rng)
        self.mlp1 = _shared_mlp(cfg.mlp1, 3, rng)
        if cfg.feature_tnet:
            self.tnet_feat = TNet(cfg.mlp1[-1], cfg.tnet_widths, rng)
        self.mlp2 = _shared_mlp(cfg.mlp2, cfg.mlp1[-1], rng)
        self.out_dim = cfg.mlp2[-1]

    def forward(self, cloud, mask, train=True):
        pts, offsets = pack_points(cloud, mask)
        self._offsets = offsets
        x = pts
        if self.cfg.input_tnet:
            self._t_in = self.tnet_in.forward(x, offsets, train)
            self._x_in = x
            x = _apply_transform(x, self._t_in, offsets)
        x = self.mlp1.forward(x, train)
        if self.cfg.feature_tnet:
            self._t_feat = self.tnet_feat.forward(x, offsets, train)
            self._x_feat = x
            x = _apply_transform(x, self._t_feat, offsets)
        x = self.mlp2.forward(x, train)
        self._n_rows = x.shape[0]
        out, self._arg = F.segment_max(x, offsets)
        return out

    def backward(self, g):
        """Returns the gradient with respect to the packed real points."""
        offsets = self._offsets
        dx = F.segment_max_backward(g, self._arg, self._n_rows)
        dx = self.mlp2.backward(dx)
        if self.cfg.feature_tnet:
            dx, dt = _apply_transform_backward(dx, self._x_feat, self._t_feat, offsets)
            dx = dx + self.tnet_feat.backward(dt)
        dx = self.mlp1.backward(dx)
        if self.cfg.input_tnet:
            dx, dt = _apply_transform_backward(dx, self._x_in, self._t_in, offsets)
            dx = dx + self.tnet_in.backward(dt)
        return dx


# --- visual ----------------------------------------------------------------

@dataclass(frozen=True)
class VisualNetConfig:
    stem_channels: int = 16
    # (expansion, out_channels, stride) per inverted-bottleneck block
    blocks: tuple[tuple[int, int, int], ...] = ((1, 16, 1), (6, 24, 2), (6, 24, 1), (6, 40, 2))
    head_channels: int = 128
    kernel: int = 3
    squeeze_excite: bool = True
    se_ratio: float = 0.25


def conv_bn_silu(c_in, c_out, kernel, stride, rng):
    return Sequential(Conv2d(c_in, c_out, kernel, stride, kernel // 2, rng=rng, bias=False),
                      BatchNorm(c_out), SiLU())


class SqueezeExcite(Module):
    def __init__(self, channels, reduced, rng):
        super().__init__()
        self.reduce = Dense(channels, reduced, rng)
        self.act = SiLU()
        self.expand = Dense(reduced, channels, rng)
        self.gate = Sigmoid()

    def forward(self, x, train=True):
        self._x = x
        s = self.gate.forward(self.expand.forward(self.act.forward(self.reduce.forward(x.mean(axis=(2, 3))))))
        self._s = s
        return x * s[:, :, None, None]

    def backward(self, g):
        dx = g * self._s[:, :, None, None]
        ds = (g * self._x).sum(axis=(2, 3))
        ds = self.reduce.backward(self.act.backward(self.expand.backward(self.gate.backward(ds))))
        h, w = self._x.shape[2:]
        return dx + ds[:, :, None, None] / (h * w)


class MBConv(Module):
    """Expand 1x1 -> depthwise kxk -> (squeeze-excite) -> project 1x1, with identity skip."""

    def __init__(self, c_in, c_out, expansion, stride, kernel, rng, squeeze_excite=True, se_ratio=0.25):
        super().__init__()
        mid = c_in * expansion
        self.has_expand = expansion != 1
        if self.has_expand:
            self.expand = conv_bn_silu(c_in, mid, 1, 1, rng)
        self.depthwise = Sequential(DepthwiseConv2d(mid, kernel, stride, kernel // 2, rng=rng, bias=False),
                                    BatchNorm(mid), SiLU())
        self.has_se = squeeze_excite
        if squeeze_excite:
            self.se = SqueezeExcite(mid, max(1, int(c_in * se_ratio)), rng)
        self.project = conv_bn_silu(mid, c_out, 1, 1, rng)
        self.skip = stride == 1 and c_in == c_out

    def forward(self, x, train=True):
        h = self.expand.forward(x, train) if self.has_expand else x
        h = self.depthwise.forward(h, train)
        if self.has_se:
            h = self.se.forward(h, train)
        h = self.project.forward(h, train)
        return h + x if self.skip else h

    def backward(self, g):
        d = self.project.backward(g)
        if self.has_se:
            d = self.se.backward(d)
        d = self.depthwise.backward(d)
        if self.has_expand:
            d = self.expand.backward(d)
        return d + g if self.skip else d


class VisualNet(Module):
    def __init__(self, cfg: VisualNetConfig = VisualNetConfig(), rng=None):
        super().__init__()
        self.cfg = cfg
        self.stem = conv_bn_silu(3, cfg.stem_channels, cfg.kernel, 2, rng)
        blocks = []
        c = cfg.stem_channels
        for expansion, c_out, stride in cfg.blocks:
            blocks.append(MBConv(c, c_out, expansion, stride, cfg.kernel, rng, cfg.squeeze_excite, cfg.se_ratio))
            c = c_out
        self.body = Sequential(*blocks)
        self.head = conv_bn_silu(c, cfg.head_channels, 1, 1, rng)
        self.pool = GlobalAvgPool2d()
        self.out_dim = cfg.head_channels

    def feature_maps(self, img, train=True):
        img = np.asarray(img, dtype=float)
        if img.ndim != 4 or img.shape[1] != 3:
            raise ShapeError(f"image batch must be (N, 3, H, W), got {img.shape}")
        return self.head.forward(self.body.forward(self.stem.forward(img, train), train), train)

    def forward(self, img, train=True):
        return self.pool.forward(self.feature_maps(img, train), train)

    def backward(self, g):
        return self.stem.backward(self.body.backward(self.head.backward(self.pool.backward(g))))
