"""Layer objects with cached forward state and explicit backward passes.

A layer instance caches what its own backward needs, so each instance may
appear only once per forward pass.
"""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import ShapeError, ZeroGradWarning
from . import functional as F

# biases draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases would make
# ReLU stacks positively homogeneous in their input at initialization
BIAS_GAIN = 1 / 3 ** 0.5


class Param:
    __slots__ = ("value", "grad", "touched")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.touched = False

    def accumulate(self, g):
        self.grad += g
        self.touched = True

    def zero_grad(self):
        self.grad[...] = 0.0
        self.touched = False

    @property
    def shape(self):
        return self.value.shape


class Module:
    """Registers Param / Module / buffer attributes for traversal."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})

    def __setattr__(self, name, value):
        if isinstance(value, Param):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, value):
        self._buffers[name] = name
        object.__setattr__(self, name, np.asarray(value, dtype=float))

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        d = {name: p.value.copy() for name, p in self.named_parameters()}
        d.update({name: np.array(b, copy=True) for name, b in self.named_buffers()})
        return d

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        owners = {}
        for name, _ in self.named_buffers():
            owners[name] = name
        missing = [n for n in list(params) + list(owners) if n not in state]
        if missing:
            raise KeyError(f"state is missing {missing[:5]}")
        for name, p in params.items():
            v = np.asarray(state[name], dtype=float)
            if v.shape != p.value.shape:
                raise ShapeError(f"{name}: expected {p.value.shape}, got {v.shape}")
            p.value[...] = v
        for name in owners:
            mod, attr = self._resolve(name)
            cur = getattr(mod, attr)
            v = np.asarray(state[name], dtype=float)
            if v.shape != cur.shape:
                raise ShapeError(f"{name}: expected {cur.shape}, got {v.shape}")
            object.__setattr__(mod, attr, v.copy())

    def _resolve(self, dotted):
        *path, attr = dotted.split(".")
        mod = self
        for part in path:
            mod = mod._children[part]
        return mod, attr

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def warn_disconnected(module: Module):
    """Warn about parameters that received no gradient in the last backward."""
    dead = [name for name, p in module.named_parameters() if not p.touched]
    if dead:
        warnings.warn(f"parameters off the loss path: {dead}", ZeroGradWarning)
    return dead


class Dense(Module):
    """Affine map on the last axis, so (N, P, C) inputs get a shared per-point map."""

    def __init__(self, n_in, n_out, rng=None, init="fan_in"):
        super().__init__()
        if init == "zero" or rng is None:
            w, b = np.zeros((n_in, n_out)), np.zeros(n_out)
        else:
            w = F.fan_in_uniform(rng, (n_in, n_out), n_in)
            b = F.fan_in_uniform(rng, (n_out,), n_in, gain=BIAS_GAIN)
        self.weight = Param(w)
        self.bias = Param(b)

    def forward(self, x, train=True):
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"Dense expects {self.weight.shape[0]} features, got {x.shape[-1]}")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, g):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        self.weight.accumulate(x2.T @ g2)
        self.bias.accumulate(g2.sum(axis=0))
        return g @ self.weight.value.T


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, rng=None):
        super().__init__()
        fan = c_in * kernel
        if rng is None:
            self.weight = Param(np.zeros((c_out, c_in, kernel)))
            self.bias = Param(np.zeros(c_out))
        else:
            self.weight = Param(F.fan_in_uniform(rng, (c_out, c_in, kernel), fan))
            self.bias = Param(F.fan_in_uniform(rng, (c_out,), fan, gain=BIAS_GAIN))
        self.stride, self.padding = stride, padding

    def forward(self, x, train=True):
        out, self._cache = F.conv1d_forward(x, self.weight.value, self.bias.value, self.stride, self.padding)
        return out

    def backward(self, g):
        dx, dw, db = F.conv1d_backward(g, self.weight.value, self._cache)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        return dx


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, rng=None, bias=True):
        super().__init__()
        fan = c_in * kernel * kernel
        w = np.zeros((c_out, c_in, kernel, kernel)) if rng is None else F.fan_in_uniform(
            rng, (c_out, c_in, kernel, kernel), fan)
        self.weight = Param(w)
        self.use_bias = bias
        if bias:
            self.bias = Param(np.zeros(c_out) if rng is None else F.fan_in_uniform(rng, (c_out,), fan, gain=BIAS_GAIN))
        self.stride, self.padding = stride, padding

    def forward(self, x, train=True):
        b = self.bias.value if self.use_bias else None
        out, self._cache = F.conv2d_forward(x, self.weight.value, b, self.stride, self.padding)
        return out

    def backward(self, g):
        dx, dw, db = F.conv2d_backward(g, self.weight.value, self._cache)
        self.weight.accumulate(dw)
        if self.use_bias:
            self.bias.accumulate(db)
        return dx


class DepthwiseConv2d(Module):
    def __init__(self, channels, kernel, stride=1, padding=0, rng=None, bias=True):
        super().__init__()
        fan = kernel * kernel
        w = np.zeros((channels, kernel, kernel)) if rng is None else F.fan_in_uniform(
            rng, (channels, kernel, kernel), fan)
        self.weight = Param(w)
        self.use_bias = bias
        if bias:
            self.bias = Param(np.zeros(channels) if rng is None else F.fan_in_uniform(rng, (channels,), fan, gain=BIAS_GAIN))
        self.stride, self.padding = stride, padding

    def forward(self, x, train=True):
        b = self.bias.value if self.use_bias else None
        out, self._cache = F.depthwise_conv2d_forward(x, self.weight.value, b, self.stride, self.padding)
        return out

    def backward(self, g):
        dx, dw, db = F.depthwise_conv2d_backward(g, self.weight.value, self._cache)
        self.weight.accumulate(dw)
        if self.use_bias:
            self.bias.accumulate(db)
        return dx


class BatchNorm(Module):
    """Batch statistics while training, running averages at inference.

    With ``momentum=None`` the running stats become a cumulative average
    over every batch seen since the last ``reset_running_stats``.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum, self.eps = momentum, eps
        self._seen = 0

    def reset_running_stats(self):
        self.running_mean = np.zeros_like(self.running_mean)
        self.running_var = np.ones_like(self.running_var)
        self._seen = 0

    def forward(self, x, train=True):
        if x.shape[1] != self.gamma.shape[0]:
            raise ShapeError(f"BatchNorm expects {self.gamma.shape[0]} channels, got {x.shape[1]}")
        self._batch = train
        if train:
            out, self._cache = F.batchnorm_forward(x, self.gamma.value, self.beta.value, eps=self.eps)
            axes = self._cache[2]
            m = x.size // x.shape[1]
            mean = x.mean(axis=axes)
            var = x.var(axis=axes) * (m / max(m - 1, 1))
            self._seen += 1
            rate = 1.0 / self._seen if self.momentum is None else self.momentum
            self.running_mean = (1 - rate) * self.running_mean + rate * mean
            self.running_var = (1 - rate) * self.running_var + rate * var
        else:
            out, self._cache = F.batchnorm_forward(
                x, self.gamma.value, self.beta.value, self.running_mean, self.running_var, self.eps)
        return out

    def backward(self, g):
        dx, dg, db = F.batchnorm_backward(g, self.gamma.value, self._cache, batch_stats=self._batch)
        self.gamma.accumulate(dg)
        self.beta.accumulate(db)
        return dx


def batchnorm_layers(module: Module) -> list[BatchNorm]:
    found, stack = [], [module]
    while stack:
        m = stack.pop()
        if isinstance(m, BatchNorm):
            found.append(m)
        stack.extend(reversed(list(m._children.values())))
    return found


def recalibrate_batchnorm(module: Module, batches) -> int:
    """Replace running stats by the average over ``batches`` with weights frozen.

    ``batches`` yields inputs for ``module.forward``. Returns the number of
    BatchNorm layers touched.
    """
    layers = batchnorm_layers(module)
    if not layers:
        return 0
    saved = [bn.momentum for bn in layers]
    for bn in layers:
        bn.reset_running_stats()
        bn.momentum = None
    try:
        for x in batches:
            module.forward(x, True)
    finally:
        for bn, mom in zip(layers, saved):
            bn.momentum = mom
    return len(layers)


class ReLU(Module):
    def forward(self, x, train=True):
        self._pos = x > 0
        return x * self._pos

    def backward(self, g):
        return g * self._pos


class SiLU(Module):
    def forward(self, x, train=True):
        self._x = x
        return F.silu(x)

    def backward(self, g):
        return g * F.silu_grad(self._x)


class Sigmoid(Module):
    def forward(self, x, train=True):
        self._y = F.sigmoid(x)
        return self._y

    def backward(self, g):
        return g * self._y * (1 - self._y)


class MaxPool1d(Module):
    def __init__(self, window, stride=None, ceil_mode=False):
        super().__init__()
        self.window, self.stride, self.ceil_mode = window, stride, ceil_mode

    def forward(self, x, train=True):
        out, self._cache = F.maxpool1d_forward(x, self.window, self.stride, ceil_mode=self.ceil_mode)
        return out

    def backward(self, g):
        return F.maxpool1d_backward(g, self._cache)


class GlobalAvgPool2d(Module):
    def forward(self, x, train=True):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, g):
        n, c, h, w = self._shape
        return np.broadcast_to(g[:, :, None, None] / (h * w), self._shape).copy()


class Flatten(Module):
    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            setattr(self, str(i), layer)

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g
