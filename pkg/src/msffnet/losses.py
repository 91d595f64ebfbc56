"""Mu-law tonemapping and the two tonemapped l1 training losses."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .autodiff import Tensor, ops

MU = 5000.0
DEFAULT_LAMBDA = 2.0


def tonemap_mu(h: Tensor, mu: float = MU) -> Tensor:
    """log(1 + mu*H) / log(1 + mu), after clamping H to [0, 1]."""
    return ops.log1p(ops.clamp(h, 0.0, 1.0) * mu) * (1.0 / math.log1p(mu))


def _l1_tonemapped(pred: Tensor, gt: Tensor, mu: float) -> Tensor:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return ops.mean(ops.abs(tonemap_mu(pred, mu) - tonemap_mu(gt, mu)))


def loss_tm(hdr: Tensor, gt: Tensor, mu: float = MU) -> Tensor:
    return _l1_tonemapped(hdr, gt, mu)


def loss_reg(h_of: Tensor, gt: Tensor, mu: float = MU) -> Tensor:
    """Same l1 as loss_tm, applied to the image rebuilt from warped features alone."""
    return _l1_tonemapped(h_of, gt, mu)


@dataclass(frozen=True)
class LossReport:
    l_tm: float
    l_reg: float
    total: float
    lam: float


def total_loss(hdr: Tensor, h_of: Tensor, gt: Tensor, lam: float = DEFAULT_LAMBDA,
               mu: float = MU) -> tuple[Tensor, LossReport]:
    l_tm = loss_tm(hdr, gt, mu)
    l_reg = loss_reg(h_of, gt, mu)
    total = l_tm + l_reg * lam
    tm, reg = l_tm.item(), l_reg.item()
    return total, LossReport(tm, reg, tm + lam * reg, lam)
