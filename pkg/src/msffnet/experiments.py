"""Desk-scale experiment drivers on synthetic scenes.

Each driver builds its own data from fixed seeds, trains, and returns a small
result record, so the acceptance tests and ad hoc studies share one protocol.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, get_profile
from .data.synth import SyntheticSample, saturation_mask, synth_scene
from .metrics import psnr
from .train import Trainer, lambda_sweep, predict

FLOW_MARGIN = 8  # border pixels excluded from flow statistics


@dataclass
class OverfitResult:
    l_tm: float
    psnr_mu: float
    steps: int


@dataclass
class FlowStats:
    median_flow: tuple[float, float]  # over interior, non-saturated, non-occluded pixels
    pixels: int
    epe_saturated: float  # median endpoint error on saturated interior pixels (nan if none)
    epe_all: float


@dataclass
class LambdaRun:
    seed: int
    epe: dict[float, float] = field(default_factory=dict)
    stats: dict[float, list[FlowStats]] = field(default_factory=dict)


def overfit(max_steps: int = 2000, seed: int = 0, size: int = 64,
            config: TrainConfig | None = None) -> OverfitResult:
    """Fit one translated scene; one step per epoch so the cosine arc spans the run."""
    sample = synth_scene(seed, translation=(4, 0), size=size)
    cfg = config or get_profile("desk").replace(batch_size=1, augment=False, prefetch=0,
                                                epochs=max_steps, patch_size=size, patch_stride=size)
    trainer = Trainer(cfg, [sample])
    trainer.run(max_steps=max_steps)
    hdr, _ = predict(trainer.model, sample.stack, cfg.gamma)
    return OverfitResult(trainer.history[-1].l_tm, psnr(hdr, sample.stack.gt.pixels, "mu", cfg.mu),
                         trainer.step)


def _masks(sample: SyntheticSample, margin: int):
    h, w = sample.gt_flow.shape[1:]
    interior = np.zeros((h, w), bool)
    interior[margin:h - margin, margin:w - margin] = True
    interior &= sample.occlusion_mask == 0
    return interior, saturation_mask(sample.stack.reference)


def saturated_epe(flow: np.ndarray, sample: SyntheticSample, margin: int = FLOW_MARGIN) -> np.ndarray:
    """Endpoint errors on interior pixels where the reference exposure is clipped."""
    interior, sat = _masks(sample, margin)
    return np.linalg.norm(flow - sample.gt_flow, axis=0)[interior & sat]


def flow_stats(flow: np.ndarray, sample: SyntheticSample, margin: int = FLOW_MARGIN) -> FlowStats:
    """Compare a predicted 2 x H x W scale-0 flow with the sample's ground truth."""
    interior, sat = _masks(sample, margin)
    epe = np.linalg.norm(flow - sample.gt_flow, axis=0)
    keep = interior & ~sat
    med = (float(np.median(flow[0][keep])), float(np.median(flow[1][keep]))) if keep.any() else (np.nan, np.nan)
    sat_px = interior & sat
    return FlowStats(med, int(keep.sum()), float(np.median(epe[sat_px])) if sat_px.any() else float("nan"),
                     float(np.median(epe[interior])))


def translation_set(count: int, seed: int, max_shift: float = 6.0, size: int = 64,
                    saturation: float = 0.1) -> list[SyntheticSample]:
    """Scenes with independent random translations, so alignment has to come from the flow."""
    rng = np.random.default_rng([seed, count])
    return [synth_scene(int(rng.integers(2 ** 31)), translation=tuple(rng.uniform(-max_shift, max_shift, 2)),
                        size=size, saturation_fraction=saturation) for _ in range(count)]


def alignment_config(**changes) -> TrainConfig:
    return get_profile("desk").replace(**{
        "lam": 2.0, "epochs": 150, "prefetch": 0, "flow_warmup": 100, "flow_lr_scale": 0.3, **changes})


def alignment_recovery(config: TrainConfig | None = None, count: int = 16, seed: int = 0,
                       translation=(4.0, 0.0)) -> FlowStats:
    """Train on a random-translation set that contains the target scene; report its scale-0 flow."""
    cfg = config or alignment_config()
    target = synth_scene(seed, translation=translation, size=cfg.patch_size, saturation_fraction=0.1)
    samples = [target] + translation_set(count - 1, seed, size=cfg.patch_size)
    trainer = Trainer(cfg, samples)
    trainer.run()
    _, flows = predict(trainer.model, target.stack, cfg.gamma)
    return flow_stats(flows[0], target)


def regularizer_config(**changes) -> TrainConfig:
    return get_profile("desk").replace(**{
        "epochs": 40, "prefetch": 0, "flow_warmup": 30, "flow_lr_scale": 0.3, **changes})


def regularizer_effect(seeds=(0, 1, 2), lambdas=(0.0, 2.0), count: int = 8, held_out: int = 4,
                       saturation: float = 0.3, config: TrainConfig | None = None) -> list[LambdaRun]:
    """Median EPE over saturated reference pixels of held-out scenes, per seed and lambda."""
    base = config or regularizer_config()
    runs = []
    for seed in seeds:
        train_set = translation_set(count, seed, size=base.patch_size, saturation=saturation)
        test_set = translation_set(held_out, 1000 + seed, size=base.patch_size, saturation=saturation)
        trainers = lambda_sweep(base.replace(seed=seed), train_set, lambdas)
        run = LambdaRun(seed)
        for lam, trainer in trainers.items():
            flows = [predict(trainer.model, s.stack, base.gamma)[1][0] for s in test_set]
            run.stats[lam] = [flow_stats(f, s) for f, s in zip(flows, test_set)]
            run.epe[lam] = float(np.median(np.concatenate(
                [saturated_epe(f, s) for f, s in zip(flows, test_set)])))
        runs.append(run)
    return runs
