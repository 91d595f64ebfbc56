import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msffnet.autodiff import Tensor
from msffnet.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from msffnet.config import ConfigError, TrainConfig, dump_config, get_profile, load_config
from msffnet.data import ExposureStack, synth_scene
from msffnet.optim import Adam, cosine_lr
from msffnet.train import (NonFiniteLossError, Trainer, batch_arrays, epoch_batches, evaluate,
                           make_patches, model_from_checkpoint, predict, prefetch)

TINY = TrainConfig(channels=8, reduction=4, flow_widths=(8, 8, 8, 8), patch_size=32, patch_stride=32,
                   batch_size=2, epochs=3, lr_init=1e-3, lr_final=1e-4, seed=7)


@pytest.fixture(scope="module")
def samples():
    return [synth_scene(i, translation=(2, -1), size=32) for i in range(3)]


# ------------------------------------------------------------------ schedule

def test_cosine_schedule_values():
    assert cosine_lr(0, 210, 1e-4, 1e-6) == 1e-4
    assert cosine_lr(210, 210, 1e-4, 1e-6) == pytest.approx(1e-6, abs=1e-18)
    assert cosine_lr(105, 210, 1e-4, 1e-6) == pytest.approx(5.05e-5, rel=1e-12)
    with pytest.raises(ValueError):
        cosine_lr(211, 210, 1e-4, 1e-6)


@given(st.integers(1, 300))
def test_cosine_schedule_non_increasing(total):
    lrs = [cosine_lr(e, total, 1e-4, 1e-6) for e in range(total + 1)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


# ---------------------------------------------------------------------- adam

def reference_adam(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def test_adam_first_step_is_unit_sized():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"w": w})
    w.grad = np.array([1.0], np.float32)
    opt.step(0.1)
    assert float(w.data[0]) == pytest.approx(0.9, abs=1e-6)


def test_adam_matches_scalar_reference():
    from msffnet.autodiff import precision
    with precision("float64"):
        w = Tensor(np.array([0.3]), requires_grad=True)
    opt = Adam({"w": w})
    grads = [0.5, -1.0, 2.0, 0.1, 0.0, -0.3]
    for g in grads:
        w.grad = np.array([g])
        opt.step(0.01)
    assert float(w.data[0]) == pytest.approx(reference_adam(0.3, grads, 0.01), abs=1e-14)


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    w = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    opt = Adam({"w": w})
    w.grad = np.array([1.0, 1.0], np.float32)
    opt.step(0.0)
    m, v = opt.m["w"].copy(), opt.v["w"].copy()
    w.grad = np.zeros(2, np.float32)
    opt.step(0.1)
    np.testing.assert_allclose(opt.m["w"], 0.9 * m, rtol=1e-6)
    np.testing.assert_allclose(opt.v["w"], 0.999 * v, rtol=1e-6)
    # from a fresh state a zero gradient moves nothing
    w2 = Tensor(np.array([2.0]), requires_grad=True)
    opt2 = Adam({"w": w2})
    w2.grad = np.zeros(1, np.float32)
    opt2.step(0.1)
    assert w2.data[0] == 2.0


def test_adam_missing_gradient_is_an_error():
    w = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(RuntimeError, match="w"):
        Adam({"w": w}).step(0.1)


# -------------------------------------------------------------------- config

def test_profiles():
    paper = get_profile("paper")
    assert (paper.lam, paper.mu, paper.gamma, paper.batch_size, paper.epochs) == (2.0, 5000.0, 2.2, 8, 210)
    assert (paper.lr_init, paper.lr_final, paper.adam_eps) == (1e-4, 1e-6, 1e-8)
    assert (paper.patch_size, paper.patch_stride, paper.channels) == (256, 128, 64)
    desk = get_profile("desk")
    assert (desk.channels, desk.patch_size, desk.patch_stride, desk.batch_size) == (16, 64, 32, 2)
    with pytest.raises(ConfigError):
        get_profile("laptop")


@pytest.mark.parametrize("bad", [dict(lr_final=1.0), dict(batch_size=0), dict(lr_init=0.0),
                                 dict(reduction=5), dict(precision="float16"), dict(lam=-1)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_toml_loading_and_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('profile = "desk"\nlambda = 0.5\nepochs = 3\nflow_widths = [8, 8, 4, 4]\n')
    cfg = load_config(path)
    assert cfg.profile == "desk" and cfg.lam == 0.5 and cfg.epochs == 3 and cfg.channels == 16
    assert cfg.flow_widths == (8, 8, 4, 4)
    assert load_config(path, lam=2.0, seed=None).lam == 2.0
    (tmp_path / "u.toml").write_text("learning_rate = 1\n")
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config(tmp_path / "u.toml")
    (tmp_path / "d.toml").write_text(dump_config(cfg))
    assert load_config(tmp_path / "d.toml") == cfg


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path, rng):
    params = {"a.w": rng.normal(size=(3, 2)).astype(np.float32), "b": np.arange(4, dtype=np.float64)}
    ck = Checkpoint(TINY, params, {k: v * 2 for k, v in params.items()}, {k: v * 3 for k, v in params.items()},
                    adam_t=5, epoch=2, step=9, rng={"seed": 7})
    save_checkpoint(tmp_path / "x.ckpt", ck)
    raw = (tmp_path / "x.ckpt").read_bytes()
    assert raw.startswith(b"MSFF1")
    back = load_checkpoint(tmp_path / "x.ckpt")
    assert back.config == TINY and (back.adam_t, back.epoch, back.step) == (5, 2, 9)
    for k in params:
        assert back.params[k].dtype == params[k].dtype
        assert back.params[k].tobytes() == params[k].tobytes()
        assert back.adam_v[k].tobytes() == (params[k] * 3).tobytes()
    (tmp_path / "bad.ckpt").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")


# ------------------------------------------------------------------- batches

def test_epoch_batches_are_seeded_per_epoch(samples):
    patches = make_patches(samples, TINY)
    a = [b[0] for b in epoch_batches(patches, TINY, 1)]
    b = [b[0] for b in epoch_batches(patches, TINY, 1)]
    c = [b[0] for b in epoch_batches(patches, TINY, 2)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))
    assert [x.shape[0] for x in a] == [2, 1]


def test_batch_arrays_layout(samples):
    x1, xr, gt = batch_arrays(samples[:2], 2.2)
    assert x1.shape == xr.shape == (2, 6, 32, 32) and gt.shape == (2, 3, 32, 32)
    assert np.array_equal(xr[0, :3], samples[0].stack.reference.pixels.transpose(2, 0, 1))


def test_prefetch_preserves_order_and_errors():
    assert list(prefetch(iter(range(10)), 2)) == list(range(10))
    assert list(prefetch(iter(range(3)), 0)) == [0, 1, 2]

    def boom():
        yield 1
        raise RuntimeError("loader failed")

    with pytest.raises(RuntimeError, match="loader failed"):
        list(prefetch(boom(), 2))
    it = prefetch(iter(range(1000)), 1)
    assert next(it) == 0
    it.close()  # consumer stops early without hanging


# ------------------------------------------------------------------- trainer

def test_identical_runs_write_identical_logs(tmp_path, samples):
    Trainer(TINY, samples, tmp_path / "a").run()
    Trainer(TINY, samples, tmp_path / "b").run()
    log_a = (tmp_path / "a" / "losses.csv").read_bytes()
    assert log_a == (tmp_path / "b" / "losses.csv").read_bytes()
    lines = log_a.decode().splitlines()
    assert lines[0] == "epoch,step,l_tm,l_reg,total,lr" and len(lines) == 1 + 3 * 2
    assert (tmp_path / "a" / "final.ckpt").exists()


def test_resume_equals_uninterrupted(tmp_path, samples):
    cfg = TINY.replace(checkpoint_every=1)
    full = Trainer(cfg, samples, tmp_path / "full")
    full.run()
    part = Trainer(cfg, samples, tmp_path / "part")
    part.run(until_epoch=1)
    resumed = Trainer(cfg, samples, tmp_path / "part", resume=tmp_path / "part" / "epoch_0001.ckpt")
    resumed.run()
    assert ((tmp_path / "full" / "losses.csv").read_bytes()
            == (tmp_path / "part" / "losses.csv").read_bytes())
    a, b = full.model.state_dict(), resumed.model.state_dict()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert full.adam.t == resumed.adam.t


def test_zero_learning_rate_leaves_parameters(samples):
    tr = Trainer(TINY, samples)
    before = {k: v.copy() for k, v in tr.model.state_dict().items()}
    for x1, xr, gt in epoch_batches(tr.patches, TINY, 0):
        tr.train_step(x1, xr, gt, lr=0.0)
    after = tr.model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_lambda_zero_total_equals_tm(samples):
    rows = Trainer(TINY.replace(lam=0.0, epochs=1), samples).run()
    assert all(r.total == r.l_tm and r.l_reg > 0 for r in rows)


def test_lr_follows_schedule(samples):
    rows = Trainer(TINY, samples).run()
    by_epoch = {r.epoch: r.lr for r in rows}
    assert by_epoch[0] == TINY.lr_init and by_epoch[2] == pytest.approx(TINY.lr_final)


def test_nonfinite_loss_aborts_with_dump(tmp_path, samples):
    tr = Trainer(TINY, samples, tmp_path)
    tr.model.merge.out.weight.data[:] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        tr.run()
    assert info.value.dump_path is not None and info.value.dump_path.exists()
    dump = np.load(info.value.dump_path)
    assert dump["x1"].shape == (2, 6, 32, 32) and "merge.out.weight" in dump["nonfinite_params"]


def test_predict_and_evaluate(tmp_path, samples, caplog):
    tr = Trainer(TINY.replace(epochs=1), samples, tmp_path)
    tr.run()
    model = model_from_checkpoint(tmp_path / "final.ckpt")
    hdr, flows = predict(model, samples[0].stack)
    assert hdr.shape == (32, 32, 3) and flows[0].shape == (2, 32, 32)
    scenes = [("a", samples[0].stack), ("nogt", ExposureStack(samples[1].stack.ldr, None))]
    with caplog.at_level(logging.WARNING, logger="msffnet"):
        rep = evaluate(model, scenes)
    assert rep.names == ["a"] and "nogt" in caplog.text
    assert math.isfinite(rep.psnr_mu[0])


def test_flow_warmup_freezes_estimators_then_releases(samples):
    cfg = TINY.replace(epochs=2, flow_warmup=2)
    tr = Trainer(cfg, samples)
    est = {k: v.copy() for k, v in tr.model.state_dict().items() if k.startswith("align.estimators.")}
    other = tr.model.merge.out.weight.data.copy()
    tr.run(max_steps=2)
    after = tr.model.state_dict()
    assert all(np.array_equal(est[k], after[k]) for k in est)
    assert not np.array_equal(other, tr.model.merge.out.weight.data)
    tr.run(max_steps=3)
    assert any(not np.array_equal(est[k], tr.model.state_dict()[k]) for k in est)


def test_flow_lr_scale_zero_keeps_estimators(samples):
    tr = Trainer(TINY.replace(epochs=1, flow_lr_scale=0.0), samples)
    est = {k: v.copy() for k, v in tr.model.state_dict().items() if k.startswith("align.estimators.")}
    tr.run()
    assert all(np.array_equal(est[k], tr.model.state_dict()[k]) for k in est)
