"""Finite-difference checks over every layer primitive and a reduced predictor."""
from __future__ import annotations

import numpy as np

from ..nn import functional as F
from ..nn.gradcheck import GradCheckReport, check_module, grad_check
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
    Sigmoid,
    SiLU,
    batchnorm_layers,
)
from .extractors import (
    MBConv,
    PointNetLiteConfig,
    PositionNet,
    PositionNetConfig,
    SqueezeExcite,
    VisualNetConfig,
)
from .fusion import BeamModelConfig, BeamPredictor, FusionHeadConfig, ModelInputs


def _randomize_batchnorm(module: Module, rng):
    # identity affine params hide scale/shift gradient bugs
    for bn in batchnorm_layers(module):
        bn.gamma.value[:] = rng.normal(size=bn.gamma.shape)
        bn.beta.value[:] = rng.normal(size=bn.beta.shape)


def layer_cases(rng):
    """(name, module, input) triples covering every primitive and block."""
    return [
        ("dense", Dense(3, 5, rng), rng.normal(size=(2, 4, 3))),
        ("conv1d", Conv1d(2, 3, 3, stride=2, padding=1, rng=rng), rng.normal(size=(2, 2, 9))),
        ("conv2d", Conv2d(2, 3, 3, stride=2, padding=1, rng=rng), rng.normal(size=(2, 2, 7, 6))),
        ("conv2d_1x1", Conv2d(3, 4, 1, rng=rng), rng.normal(size=(2, 3, 4, 4))),
        ("depthwise", DepthwiseConv2d(3, 3, stride=2, padding=1, rng=rng), rng.normal(size=(2, 3, 6, 6))),
        ("batchnorm", BatchNorm(3), rng.normal(size=(4, 3, 3, 3))),
        ("relu", ReLU(), rng.normal(size=(3, 5))),
        ("silu", SiLU(), rng.normal(size=(3, 5))),
        ("sigmoid", Sigmoid(), rng.normal(size=(3, 5))),
        ("maxpool", MaxPool1d(2, ceil_mode=True), rng.normal(size=(2, 3, 5))),
        ("global_avg_pool", GlobalAvgPool2d(), rng.normal(size=(2, 3, 4, 4))),
        ("flatten", Flatten(), rng.normal(size=(2, 3, 4))),
        ("squeeze_excite", SqueezeExcite(4, 2, rng), rng.normal(size=(2, 4, 3, 3))),
        ("mbconv_skip", MBConv(4, 4, 3, 1, 3, rng), rng.normal(size=(3, 4, 5, 5))),
        ("mbconv_stride", MBConv(3, 5, 2, 2, 3, rng), rng.normal(size=(3, 3, 6, 6))),
        ("position_net", PositionNet(PositionNetConfig(channels=(3, 4, 5), convs_per_block=2), rng),
         rng.random((3, 2))),
    ]


def check_layers(seed: int = 0, max_per_tensor: int | None = 40) -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(seed)
    out = {}
    for name, module, x in layer_cases(rng):
        _randomize_batchnorm(module, rng)
        out[name] = check_module(module, x, rng=rng, max_per_tensor=max_per_tensor)
    return out


def reduced_model_config(n_beams: int = 8) -> BeamModelConfig:
    """Small all-modality predictor for finite-difference checks."""
    return BeamModelConfig(
        n_beams=n_beams,
        position=PositionNetConfig(channels=(4, 6, 8), convs_per_block=2),
        pointnet=PointNetLiteConfig(mlp1=(8, 8), mlp2=(8, 16, 32), tnet_widths=(8, 16)),
        visual=VisualNetConfig(stem_channels=4, blocks=((1, 4, 1), (6, 6, 2), (6, 6, 1)), head_channels=8),
        head=FusionHeadConfig(hidden=16, zero_init_output=False),
    )


def reduced_inputs(rng, n=3, n_points=8, image=16, n_masked=2):
    mask = np.ones((n, n_points + n_masked), bool)
    mask[:, n_points:] = False
    cloud = rng.normal(size=(n, n_points + n_masked, 3))
    cloud[~mask] = 0.0
    return ModelInputs(rng.random((n, 2)), rng.normal(size=(n, 3, image, image)), cloud, mask)


def check_predictor(model: BeamPredictor, x: ModelInputs, labels, max_per_tensor: int | None = 10,
                    seed: int = 0) -> GradCheckReport:
    """Check parameter and input gradients of the batch-mean cross-entropy."""
    labels = np.asarray(labels, dtype=int)

    def loss():
        return F.softmax_cross_entropy(model.forward(x, True), labels)[0]

    model.zero_grad()
    _, d = F.softmax_cross_entropy(model.forward(x, True), labels)
    g = model.backward(d)
    named = list(model.named_parameters())
    arrays = [p.value for _, p in named]
    grads = [p.grad.copy() for _, p in named]
    names = [n for n, _ in named]
    for key, arr in (("pos", x.pos), ("vis", x.vis), ("lid", x.cloud)):
        if key in g:
            arrays.append(arr)
            grads.append(g[key])
            names.append(f"input.{key}")
    return grad_check(loss, arrays, grads, names, max_per_tensor=max_per_tensor, rng=np.random.default_rng(seed))


def check_reduced_model(seed: int = 0, max_per_tensor: int | None = 10) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    cfg = reduced_model_config()
    model = BeamPredictor(cfg, seed=seed)
    _randomize_batchnorm(model, rng)
    x = reduced_inputs(rng)
    labels = rng.integers(0, cfg.n_beams, len(x))
    return check_predictor(model, x, labels, max_per_tensor, seed)
