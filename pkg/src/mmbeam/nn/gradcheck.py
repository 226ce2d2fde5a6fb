"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    per_tensor: dict[str, float] = field(default_factory=dict)
    worst: str = ""
    n_zero: int = 0  # entries where both gradients sit inside the roundoff bound

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def rel_error(analytic, numeric, floor=1e-6):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


# A central difference of a loss L carries roughly eps*|L|/h of rounding
# noise, so a true zero gradient (dead ReLU unit, bias feeding BatchNorm)
# reads as ~1e-10 rather than 0. Entries where both the analytic and the
# numeric value fall below this many ulps of |L|/h count as exact zeros.
ROUNDOFF_ULPS = 64


def grad_check(
    loss_fn: Callable[[], float],
    arrays: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    names: Sequence[str] | None = None,
    h: float = 1e-5,
    max_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Perturb entries of ``arrays`` in place and compare with ``grads``.

    ``loss_fn`` must recompute the scalar loss from the current array
    contents. With ``max_per_tensor`` only a random subset of entries of each
    array is probed.
    """
    rng = rng or np.random.default_rng(0)
    names = list(names) if names is not None else [f"t{i}" for i in range(len(arrays))]
    worst_val, worst_name, total, n_zero = 0.0, "", 0, 0
    eps = np.finfo(float).eps
    per = {}
    for name, arr, g in zip(names, arrays, grads):
        flat = arr.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = rng.choice(flat.size, max_per_tensor, replace=False)
        errs = []
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            numeric = (up - down) / (2 * h)
            noise = ROUNDOFF_ULPS * eps * max(abs(up), abs(down), 1.0) / h
            if max(abs(gflat[i]), abs(numeric)) <= noise:
                n_zero += 1
                errs.append(0.0)
                continue
            errs.append(float(rel_error(gflat[i], numeric, floor)))
        total += len(idx)
        per[name] = max(errs) if errs else 0.0
        if per[name] > worst_val:
            worst_val, worst_name = per[name], name
    return GradCheckReport(worst_val, total, per, worst_name, n_zero)


def check_module(module, x, train=True, rng=None, max_per_tensor=None, h=1e-5, floor=1e-6) -> GradCheckReport:
    """Gradient check of ``module`` under the scalar loss sum(out * R), R random.

    Parameters and the input ``x`` are both probed; ``x`` is perturbed in place.
    """
    rng = rng or np.random.default_rng(0)
    out = module.forward(x, train)
    weights = rng.normal(size=out.shape)

    def loss():
        return float((module.forward(x, train) * weights).sum())

    module.zero_grad()
    module.forward(x, train)
    dx = module.backward(weights)
    named = list(module.named_parameters())
    arrays = [p.value for _, p in named] + [x]
    grads = [p.grad.copy() for _, p in named] + [dx]
    names = [n for n, _ in named] + ["input"]
    return grad_check(loss, arrays, grads, names, h=h, max_per_tensor=max_per_tensor, rng=rng, floor=floor)
