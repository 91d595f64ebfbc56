import numpy as np
import pytest

from msffnet import experiments
from msffnet.data import synth_scene


def test_flow_stats_of_ground_truth_is_exact():
    s = synth_scene(3, translation=(4, 0), size=64, saturation_fraction=0.3)
    st = experiments.flow_stats(s.gt_flow, s)
    assert st.median_flow == (4.0, 0.0) and st.epe_all == 0.0 and st.epe_saturated == 0.0
    assert 0 < st.pixels < 48 * 48
    zero = experiments.flow_stats(np.zeros_like(s.gt_flow), s)
    assert zero.epe_all == pytest.approx(4.0) and zero.median_flow == (0.0, 0.0)


def test_saturated_epe_uses_only_clipped_interior_pixels():
    s = synth_scene(1, translation=(2, 2), size=64, saturation_fraction=0.3)
    none = synth_scene(1, translation=(2, 2), size=64, saturation_fraction=0.0)
    flow = np.zeros_like(s.gt_flow)
    errs = experiments.saturated_epe(flow, s)
    assert errs.size > 0 and np.allclose(errs, np.hypot(2, 2))
    assert experiments.saturated_epe(flow, none).size == 0
    assert np.isnan(experiments.flow_stats(flow, none).epe_saturated)


def test_translation_set_is_deterministic_and_bounded():
    a = experiments.translation_set(4, seed=5, max_shift=3.0, size=32)
    b = experiments.translation_set(4, seed=5, max_shift=3.0, size=32)
    assert all(np.array_equal(x.gt_flow, y.gt_flow) for x, y in zip(a, b))
    shifts = [tuple(x.gt_flow[:, 0, 0]) for x in a]
    assert len(set(shifts)) == 4 and max(abs(v) for sh in shifts for v in sh) <= 3.0


def test_protocol_configs_keep_lambda_and_desk_shape():
    assert experiments.alignment_config().lam == 2.0
    cfg = experiments.regularizer_config(epochs=1)
    assert cfg.channels == 16 and cfg.epochs == 1 and cfg.flow_warmup > 0


def test_regularizer_effect_smoke():
    cfg = experiments.regularizer_config(epochs=1, channels=8, reduction=4, flow_widths=(8, 8, 8, 8),
                                         patch_size=32, patch_stride=32)
    runs = experiments.regularizer_effect(seeds=(0,), count=2, held_out=1, config=cfg)
    assert set(runs[0].epe) == {0.0, 2.0} and all(np.isfinite(v) for v in runs[0].epe.values())


def test_overfit_driver_counts_steps():
    cfg = experiments.regularizer_config(epochs=3, channels=8, reduction=4, flow_widths=(8, 8, 8, 8),
                                         batch_size=1, augment=False)
    res = experiments.overfit(max_steps=3, size=64, config=cfg)
    assert res.steps == 3 and res.l_tm > 0 and np.isfinite(res.psnr_mu)
