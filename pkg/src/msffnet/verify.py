"""Named finite-difference gradient checks, run in float64."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, grad_check, ops, precision
from .losses import tonemap_mu

THRESHOLD = 1e-4


def _t(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _fractional(rng, shape, span=2):
    """Offsets whose fractional part stays in [0.2, 0.8], clear of bilinear cell edges."""
    return rng.integers(-span, span + 1, shape) + rng.uniform(0.2, 0.8, shape)


def _randomize(module, rng, scale=0.3):
    for p in module.parameters():
        p.data = rng.normal(0.0, scale, p.shape)


def check_conv2d(eps, rng):
    worst = 0.0
    for k, stride in ((3, 1), (3, 2), (7, 1), (1, 1)):
        x = _t(rng.normal(size=(2, 3, 9, 8)))
        w = _t(rng.normal(size=(4, 3, k, k)) * 0.3)
        b = _t(rng.normal(size=(4,)))
        fn = lambda x, w, b: ops.conv2d(x, w, b, stride=stride, padding=(k - 1) // 2)  # noqa: E731
        worst = max(worst, grad_check(fn, [x, w, b], eps))
    return worst


def check_warp_bilinear(eps, rng):
    feat = _t(rng.normal(size=(2, 3, 6, 7)))
    flow = _t(_fractional(rng, (2, 2, 6, 7)))
    return grad_check(ops.warp_bilinear, [feat, flow], eps)


def check_bilinear_upsample(eps, rng):
    x = _t(rng.normal(size=(2, 3, 4, 5)))
    return grad_check(lambda x: ops.bilinear_upsample(x, 2), [x], eps)


def check_rcab(eps, rng):
    from .merging import RCAB

    with precision("float64"):
        block = RCAB(8, 4, rng)
    _randomize(block, rng)
    x = _t(rng.normal(size=(2, 8, 5, 6)))
    return grad_check(lambda x, *_: block(x), [x] + block.parameters(), eps)


def check_tonemap_mu(eps, rng):
    # linear region plus clamped values on both sides, all clear of the kinks
    h = np.concatenate([rng.uniform(0.01, 0.99, 40), rng.uniform(1.05, 2.0, 4),
                        rng.uniform(-1.0, -0.05, 4)]).reshape(1, 3, 4, 4)
    return grad_check(lambda h: tonemap_mu(h), [_t(h)], eps)


def check_elementwise(eps, rng):
    a = _t(_away_from_zero(rng, (2, 3, 4, 4)))
    b = _t(rng.normal(size=(2, 3, 4, 4)))
    s = _t(rng.normal(size=(2, 3, 1, 1)))
    fns = [
        lambda a, b, s: ops.relu(a) * b,
        lambda a, b, s: ops.sigmoid(a) + ops.abs(a) * b,
        lambda a, b, s: ops.log1p(ops.abs(a)) - b,
        lambda a, b, s: ops.scale_broadcast(b, s) + ops.global_avg_pool(a * b),
        lambda a, b, s: ops.concat_channels([a, ops.slice_channels(b, 1, 3)]),
        lambda a, b, s: ops.mean(ops.clamp(a, -0.5, 0.5) * b),
    ]
    return max(grad_check(fn, [a, b, s], eps) for fn in fns)


def check_network(eps, rng):
    from .model import MSFFNet, NetConfig

    with precision("float64"):
        net = MSFFNet(NetConfig(channels=4, reduction=2, flow_widths=(4, 4, 4, 4),
                                hof_blocks=1, merge_blocks=1), seed=1)
    _randomize(net, rng, 0.2)
    x1 = _t(rng.uniform(0.05, 0.95, (1, 6, 8, 8)))
    xr = _t(rng.uniform(0.05, 0.95, (1, 6, 8, 8)))

    def fn(x1, xr, *_):
        out = net(x1, xr)
        return ops.add(ops.mean(out.hdr), ops.mean(out.h_of))

    return grad_check(fn, [x1, xr] + net.parameters(), eps, max_samples=3)


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < THRESHOLD


SUITE: dict[str, Callable] = {
    "conv2d": check_conv2d,
    "warp_bilinear": check_warp_bilinear,
    "bilinear_upsample": check_bilinear_upsample,
    "rcab": check_rcab,
    "tonemap_mu": check_tonemap_mu,
    "elementwise": check_elementwise,
    "network": check_network,
}


def run_checks(names=None, eps: float = 1e-6, seed: int = 0) -> list[CheckResult]:
    names = list(SUITE) if names is None else list(names)
    unknown = [n for n in names if n not in SUITE]
    if unknown:
        raise KeyError(f"unknown gradient check(s): {', '.join(unknown)}; available: {', '.join(SUITE)}")
    results = []
    with precision("float64"):
        for name in names:
            rng = np.random.default_rng([seed, list(SUITE).index(name)])
            t0 = time.perf_counter()
            err = SUITE[name](eps, rng)
            results.append(CheckResult(name, float(err), time.perf_counter() - t0))
    return results
