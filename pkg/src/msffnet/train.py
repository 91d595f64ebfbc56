"""Training loop, checkpoint resume and full-image evaluation."""
from __future__ import annotations

import logging
import math
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .autodiff import Tensor, backward, precision
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data.hdr import ExposureStack, from_nchw, input_array
from .data.patches import NUM_TRANSFORMS, as_stack, augment, crop_patches
from .losses import total_loss
from .metrics import MetricsReport
from .model import MSFFNet, infer
from .optim import Adam, cosine_lr

log = logging.getLogger("msffnet")

LOSS_COLUMNS = ("epoch", "step", "l_tm", "l_reg", "total", "lr")


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, dump_path: Path | None = None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass(frozen=True)
class LossRow:
    epoch: int
    step: int
    l_tm: float
    l_reg: float
    total: float
    lr: float

    def csv(self) -> str:
        return f"{self.epoch},{self.step},{self.l_tm!r},{self.l_reg!r},{self.total!r},{self.lr!r}"


def epoch_lr(config: TrainConfig, epoch: int) -> float:
    # the arc spans epoch 0 .. epochs-1 so the last epoch runs at lr_final
    return cosine_lr(epoch, max(config.epochs - 1, 0), config.lr_init, config.lr_final)


def make_patches(samples: Iterable, config: TrainConfig) -> list:
    patches = []
    for s in samples:
        if as_stack(s).gt is None:
            raise ValueError("training samples need a ground-truth HDR image")
        patches.extend(crop_patches(s, config.patch_size, config.patch_stride))
    if not patches:
        raise ValueError("no training patches")
    return patches


def batch_arrays(patches: list, gamma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    stacks = [as_stack(p) for p in patches]
    x1 = np.stack([input_array(s.ldr[0], gamma) for s in stacks])
    xr = np.stack([input_array(s.reference, gamma) for s in stacks])
    gt = np.stack([s.gt.pixels.transpose(2, 0, 1) for s in stacks]).astype(np.float32)
    return x1, xr, gt


def epoch_batches(patches: list, config: TrainConfig, epoch: int) -> Iterator[tuple]:
    """Shuffle and augment from a generator seeded by (seed, epoch) alone."""
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(patches))
    if config.augment:
        transforms = rng.integers(NUM_TRANSFORMS, size=len(patches))
    else:
        transforms = np.zeros(len(patches), dtype=np.int64)
    for lo in range(0, len(order), config.batch_size):
        idx = order[lo:lo + config.batch_size]
        chosen = [augment(patches[i], transform=int(transforms[i])) for i in idx]
        yield batch_arrays(chosen, config.gamma)


def prefetch(source: Iterator, depth: int) -> Iterator:
    """Run ``source`` on a worker thread feeding a bounded queue; order is preserved."""
    if depth <= 0:
        yield from source
        return
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()
    stop = threading.Event()

    def work():
        try:
            for item in source:
                while not stop.is_set():
                    try:
                        q.put(("ok", item), timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put(("ok", done))
        except BaseException as err:  # surfaced on the consumer side
            q.put(("err", err))

    worker = threading.Thread(target=work, daemon=True)
    worker.start()
    try:
        while True:
            kind, item = q.get()
            if kind == "err":
                raise item
            if item is done:
                return
            yield item
    finally:
        stop.set()
        worker.join(timeout=5)


def build_model(config: TrainConfig) -> MSFFNet:
    with precision(config.precision):
        return MSFFNet(config.net, seed=config.seed)


class Trainer:
    """Owns the model, optimizer and loss log for one training run."""

    def __init__(self, config: TrainConfig, samples: Iterable, out_dir=None,
                 resume: Checkpoint | str | Path | None = None):
        if isinstance(resume, (str, Path)):
            resume = load_checkpoint(resume)
        if resume is not None and resume.config != config:
            log.warning("checkpoint config differs from the requested config; using the checkpoint's")
            config = resume.config
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.patches = make_patches(samples, config)
        self.model = build_model(config)
        params = dict(self.model.named_parameters())
        scale = {k: config.flow_lr_scale for k in params if k.startswith("align.estimators.")}
        self.adam = Adam(params, config.beta1, config.beta2, config.adam_eps, scale)
        self.epoch = 0
        self.step = 0
        self.history: list[LossRow] = []
        if resume is not None:
            self.model.load_state_dict(resume.params)
            self.adam.load_state({"t": resume.adam_t, "m": resume.adam_m, "v": resume.adam_v})
            self.epoch, self.step = resume.epoch, resume.step
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            log_path = self.out_dir / "losses.csv"
            if resume is None or not log_path.exists():
                log_path.write_text(",".join(LOSS_COLUMNS) + "\n")

    # ------------------------------------------------------------------ state
    def checkpoint(self) -> Checkpoint:
        st = self.adam.state()
        return Checkpoint(self.config, {k: v.copy() for k, v in self.model.state_dict().items()},
                          {k: v.copy() for k, v in st["m"].items()},
                          {k: v.copy() for k, v in st["v"].items()}, st["t"], self.epoch, self.step,
                          {"scheme": "seed-epoch", "seed": self.config.seed, "next_epoch": self.epoch})

    def save(self, name: str) -> Path | None:
        if self.out_dir is None:
            return None
        path = self.out_dir / name
        save_checkpoint(path, self.checkpoint())
        return path

    # --------------------------------------------------------------- training
    def train_step(self, x1: np.ndarray, xr: np.ndarray, gt: np.ndarray, lr: float) -> LossRow:
        cfg = self.config
        out = self.model(Tensor(x1), Tensor(xr))
        loss, report = total_loss(out.hdr, out.h_of, Tensor(gt), cfg.lam, cfg.mu)
        if not all(math.isfinite(v) for v in (report.l_tm, report.l_reg, report.total)):
            raise NonFiniteLossError(
                f"non-finite loss at epoch {self.epoch} step {self.step}: "
                f"l_tm={report.l_tm} l_reg={report.l_reg}", self._dump(x1, xr, gt))
        self.model.zero_grad()
        backward(loss)
        flow_scale = cfg.flow_lr_scale if self.step >= cfg.flow_warmup else 0.0
        for k in self.adam.lr_scale:
            self.adam.lr_scale[k] = flow_scale
        self.adam.step(lr)
        row = LossRow(self.epoch, self.step, report.l_tm, report.l_reg, report.total, lr)
        self.step += 1
        return row

    def _dump(self, x1, xr, gt) -> Path | None:
        if self.out_dir is None:
            return None
        path = self.out_dir / "nonfinite_dump.npz"
        bad = [k for k, v in self.model.state_dict().items() if not np.all(np.isfinite(v))]
        np.savez(path, x1=x1, xr=xr, gt=gt, epoch=self.epoch, step=self.step,
                 nonfinite_params=np.array(bad, dtype=str))
        return path

    def run(self, until_epoch: int | None = None, max_steps: int | None = None,
            on_step: Callable[[LossRow], None] | None = None) -> list[LossRow]:
        """Train up to ``until_epoch`` (default: all epochs) or ``max_steps`` total steps."""
        cfg = self.config
        stop_epoch = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
        rows: list[LossRow] = []
        log_fh = open(self.out_dir / "losses.csv", "a") if self.out_dir is not None else None
        try:
            with precision(cfg.precision):
                while self.epoch < stop_epoch:
                    if max_steps is not None and self.step >= max_steps:
                        break
                    lr = epoch_lr(cfg, self.epoch)
                    for x1, xr, gt in prefetch(epoch_batches(self.patches, cfg, self.epoch), cfg.prefetch):
                        row = self.train_step(x1, xr, gt, lr)
                        rows.append(row)
                        if log_fh is not None:
                            log_fh.write(row.csv() + "\n")
                            log_fh.flush()
                        if on_step is not None:
                            on_step(row)
                        if max_steps is not None and self.step >= max_steps:
                            break
                    else:
                        self.epoch += 1
                        log.info("epoch %d done: step %d loss %.6f lr %.3g", self.epoch, self.step,
                                 rows[-1].total if rows else math.nan, lr)
                        if cfg.checkpoint_every and self.epoch % cfg.checkpoint_every == 0:
                            self.save(f"epoch_{self.epoch:04d}.ckpt")
                        continue
                    break
        finally:
            if log_fh is not None:
                log_fh.close()
        self.history.extend(rows)
        self.save("final.ckpt")
        return rows


def train(config: TrainConfig, samples: Iterable, out_dir=None, resume=None, **run_kwargs) -> Trainer:
    trainer = Trainer(config, samples, out_dir, resume)
    trainer.run(**run_kwargs)
    return trainer


def model_from_checkpoint(ckpt: Checkpoint | str | Path) -> MSFFNet:
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    model = build_model(ckpt.config)
    model.load_state_dict(ckpt.params)
    return model


def predict(model: MSFFNet, stack: ExposureStack, gamma: float = 2.2):
    """Full-image inference; returns (hdr H x W x 3, list of 2 x h x w flows per scale)."""
    x1 = input_array(stack.ldr[0], gamma)[None]
    xr = input_array(stack.reference, gamma)[None]
    with precision(model.parameters()[0].dtype.name):
        out = infer(model, x1, xr)
    return from_nchw(out.hdr.data), [f.data[0] for f in out.flows]


def evaluate(model: MSFFNet, scenes: Iterable[tuple[str, ExposureStack]], gamma: float = 2.2,
             mu: float = 5000.0) -> MetricsReport:
    report = MetricsReport()
    for name, stack in scenes:
        if stack.gt is None:
            log.warning("scene %s has no ground truth; skipped", name)
            continue
        hdr, _ = predict(model, stack, gamma)
        report.add(name, hdr, stack.gt.pixels, mu)
    return report


def lambda_sweep(config: TrainConfig, samples: list, lambdas=(0.0, 2.0), out_root=None,
                 **run_kwargs) -> dict[float, Trainer]:
    """Train one model per regularizer weight on the same data, seed and schedule."""
    runs = {}
    for lam in lambdas:
        out = None if out_root is None else Path(out_root) / f"lambda_{lam:g}"
        runs[lam] = train(config.replace(lam=float(lam)), samples, out, **run_kwargs)
    return runs
