import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msffnet.autodiff import (Tensor, backward, dump_tensor, get_precision, grad_check, load_tensor,
                              no_grad, ops, precision, set_precision)


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    oc, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, oc, ho, wo))
    for i in range(n):
        for o in range(oc):
            for y in range(ho):
                for xx in range(wo):
                    patch = xp[i, :, y * stride:y * stride + k, xx * stride:xx * stride + k]
                    out[i, o, y, xx] = (patch * w[o]).sum() + (b[o] if b is not None else 0)
    return out


def naive_bilinear_sample(img, x, y):
    """Scalar bilinear lookup with replicate-edge clamping."""
    h, w = img.shape
    x = min(max(x, 0.0), w - 1)
    y = min(max(y, 0.0), h - 1)
    x0, y0 = min(int(math.floor(x)), w - 2), min(int(math.floor(y)), h - 2)
    ax, ay = x - x0, y - y0
    return ((1 - ax) * (1 - ay) * img[y0, x0] + ax * (1 - ay) * img[y0, x0 + 1]
            + (1 - ax) * ay * img[y0 + 1, x0] + ax * ay * img[y0 + 1, x0 + 1])


# ------------------------------------------------------------------- tensor

def test_default_mode_and_casting():
    assert get_precision() == "float32"
    assert Tensor([1, 2]).dtype == np.float32
    with precision("float64"):
        assert Tensor([1, 2]).dtype == np.float64
    assert get_precision() == "float32"
    with pytest.raises(ValueError):
        set_precision("float16")


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        backward(ops.relu(x))
    with pytest.raises(ValueError):
        backward(ops.sum(Tensor(np.ones(3))))


def test_leaf_gradients_accumulate_over_reuse(f64):
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = ops.sum(ops.mul(x, x) + x)
    backward(y)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_tape_is_topological(f64):
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    loss = ops.mean(ops.relu(x * 2.0) + x)
    tape = backward(loss)
    seen = set()
    for node in tape.nodes:
        for inp in node.inputs:
            if inp._node is not None:
                assert inp._node.seq in seen
        seen.add(node.seq)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.relu(x)
    assert y._node is None and not y.requires_grad


def test_broadcast_rules():
    a = Tensor(np.ones((2, 3, 4, 4)))
    ops.add(a, Tensor(np.ones((2, 3, 1, 1))))
    ops.mul(a, 2.0)
    with pytest.raises(ValueError):
        ops.add(a, Tensor(np.ones((2, 3, 4, 1))))


def test_sigmoid_known_value():
    assert float(ops.sigmoid(Tensor([1.0])).data[0]) == pytest.approx(0.731059, abs=1e-6)


def test_text_dump_round_trip(tmp_path, f64, rng):
    t = Tensor(rng.normal(size=(2, 3, 4)))
    dump_tensor(tmp_path / "t.txt", t)
    back = load_tensor(tmp_path / "t.txt")
    assert np.array_equal(back.data, t.data)


# --------------------------------------------------------------------- conv

@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2), (7, 1), (7, 2)])
def test_conv_matches_loop_oracle(f64, rng, k, stride):
    x = rng.normal(size=(2, 3, 11, 9))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    pad = (k - 1) // 2
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad), atol=1e-10)


def test_conv_float32_close_to_oracle(rng):
    x = rng.normal(size=(1, 4, 8, 8))
    w = rng.normal(size=(2, 4, 3, 3))
    got = ops.conv2d(Tensor(x), Tensor(w), None, 1, 1).data
    assert got.dtype == np.float32
    np.testing.assert_allclose(got, naive_conv(x, w, None, 1, 1), atol=1e-4)


def test_conv_shape_errors_name_both_shapes():
    with pytest.raises(ValueError, match=r"\(1, 3, 8, 8\).*\(4, 2, 3, 3\)"):
        ops.conv2d(Tensor(np.ones((1, 3, 8, 8))), Tensor(np.ones((4, 2, 3, 3))))


def test_conv_output_size():
    assert ops.conv_output_size(64, 3, 2, 1) == 32
    assert ops.conv_output_size(7, 7, 1, 3) == 7


def test_conv_row_chunking_matches_single_pass(f64, rng, monkeypatch):
    x = Tensor(rng.normal(size=(1, 2, 12, 10)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    full = ops.conv2d(x, w, None, 1, 1)
    backward(ops.sum(full * full))
    gx, gw = x.grad.copy(), w.grad.copy()
    monkeypatch.setattr(ops, "COL_BUDGET", 64)
    x.grad = w.grad = None
    chunked = ops.conv2d(x, w, None, 1, 1)
    backward(ops.sum(chunked * chunked))
    np.testing.assert_allclose(chunked.data, full.data, atol=1e-12)
    np.testing.assert_allclose(x.grad, gx, atol=1e-10)
    np.testing.assert_allclose(w.grad, gw, atol=1e-10)


# -------------------------------------------------------------- interpolation

def test_upsample_matches_half_pixel_formula(f64, rng):
    x = rng.normal(size=(1, 2, 3, 5))
    out = ops.bilinear_upsample(Tensor(x), 2).data
    h, w = x.shape[2:]
    for c in range(2):
        for oy in range(2 * h):
            for ox in range(2 * w):
                sy, sx = (oy + 0.5) / 2 - 0.5, (ox + 0.5) / 2 - 0.5
                expect = naive_bilinear_sample(x[0, c], sx, sy)
                assert out[0, c, oy, ox] == pytest.approx(expect, abs=1e-12)


def test_constant_field_upsamples_to_itself(f64):
    out = ops.bilinear_upsample(Tensor(np.full((1, 2, 4, 3), 1.75)), 2).data
    np.testing.assert_allclose(out, 1.75, atol=1e-12)
    with pytest.raises(ValueError):
        ops.bilinear_upsample(Tensor(np.ones((1, 1, 2, 2))), 1)


@given(st.integers(1, 9), st.integers(1, 20))
def test_interp_rows_are_convex_weights(n_in, n_out):
    a = ops.interp_matrix(n_in, n_out)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
    assert (a >= 0).all()


# --------------------------------------------------------------------- warp

def test_zero_flow_is_exact_identity(rng):
    feat = Tensor(rng.normal(size=(2, 3, 7, 6)))
    out = ops.warp_bilinear(feat, Tensor(np.zeros((2, 2, 7, 6))))
    assert np.array_equal(out.data, feat.data)


@pytest.mark.parametrize("dx,dy", [(2, 0), (0, -3), (1, 2), (-2, -1)])
def test_integer_shift_equals_array_shift_on_interior(rng, dx, dy):
    feat = rng.normal(size=(1, 2, 10, 12)).astype(np.float32)
    flow = np.zeros((1, 2, 10, 12), np.float32)
    flow[:, 0], flow[:, 1] = dx, dy
    out = ops.warp_bilinear(Tensor(feat), Tensor(flow)).data
    m = 3
    expect = feat[:, :, m + dy:10 - m + dy, m + dx:12 - m + dx]
    np.testing.assert_allclose(out[:, :, m:10 - m, m:12 - m], expect, atol=1e-6)


def test_warp_matches_scalar_oracle_with_clamping(f64, rng):
    feat = rng.normal(size=(1, 1, 5, 6))
    flow = rng.uniform(-4, 4, size=(1, 2, 5, 6))
    out = ops.warp_bilinear(Tensor(feat), Tensor(flow)).data
    for y in range(5):
        for x in range(6):
            expect = naive_bilinear_sample(feat[0, 0], x + flow[0, 0, y, x], y + flow[0, 1, y, x])
            assert out[0, 0, y, x] == pytest.approx(expect, abs=1e-12)


def test_warp_flow_gradient_is_right_continuous_at_integers(f64):
    row = np.array([0.0, 1.0, 5.0, 6.0])  # slopes 1, 4, 1
    feat = Tensor(np.tile(row, (3, 1))[None, None])
    flow = Tensor(np.zeros((1, 2, 3, 4)), requires_grad=True)
    flow.data[0, 0, 1, 1] = 0.0  # sample sits exactly on column 1
    out = ops.warp_bilinear(feat, flow)
    pick = np.zeros((1, 1, 3, 4))
    pick[0, 0, 1, 1] = 1.0
    backward(ops.sum(ops.mul(out, Tensor(pick))))
    assert flow.grad[0, 0, 1, 1] == pytest.approx(4.0)  # slope of the segment to the right


def test_warp_gradient_zero_outside_border(f64):
    feat = Tensor(np.arange(12.0).reshape(1, 1, 3, 4))
    flow = Tensor(np.full((1, 2, 3, 4), 10.0), requires_grad=True)
    backward(ops.sum(ops.warp_bilinear(feat, flow)))
    assert np.all(flow.grad == 0)


def test_warp_shape_mismatch():
    with pytest.raises(ValueError):
        ops.warp_bilinear(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 4, 3))))


# ---------------------------------------------------------------- gradcheck

def test_grad_check_requires_float64():
    with pytest.raises(RuntimeError):
        grad_check(ops.relu, [Tensor(np.ones(2), requires_grad=True)])


def test_grad_check_detects_a_wrong_gradient(f64):
    from msffnet.autodiff.tensor import record

    def bad_square(x):
        return record("bad", x.data ** 2, (x,), lambda g: (g * 3 * x.data,))

    x = Tensor(np.array([0.5, 1.5]), requires_grad=True)
    assert grad_check(lambda x: ops.sum(bad_square(x)), [x]) > 0.1


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(3, 7), st.integers(3, 7),
       st.sampled_from([1, 2]), st.integers(0, 10 ** 6))
def test_conv_gradients_property(n, c, h, w, stride, seed):
    r = np.random.default_rng(seed)
    with precision("float64"):
        x = Tensor(r.normal(size=(n, c, h, w)), requires_grad=True)
        wt = Tensor(r.normal(size=(2, c, 3, 3)), requires_grad=True)
        b = Tensor(r.normal(size=2), requires_grad=True)
        err = grad_check(lambda x, wt, b: ops.conv2d(x, wt, b, stride, 1), [x, wt, b])
    assert err < 1e-4


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 10 ** 6))
def test_warp_gradients_property(h, w, seed):
    r = np.random.default_rng(seed)
    frac = r.uniform(0.2, 0.8, (1, 2, h, w))
    with precision("float64"):
        feat = Tensor(r.normal(size=(1, 2, h, w)), requires_grad=True)
        flow = Tensor(r.integers(-2, 3, (1, 2, h, w)) + frac, requires_grad=True)
        assert grad_check(ops.warp_bilinear, [feat, flow]) < 1e-4


def test_slice_concat_round_trip(f64, rng):
    a = Tensor(rng.normal(size=(2, 5, 3, 3)), requires_grad=True)
    parts = [ops.slice_channels(a, 0, 2), ops.slice_channels(a, 2, 5)]
    joined = ops.concat_channels(parts)
    assert np.array_equal(joined.data, a.data)
    b = ops.concat_batch([ops.slice_batch(a, 1, 2), ops.slice_batch(a, 0, 1)])
    assert np.array_equal(b.data, a.data[::-1])
    backward(ops.sum(joined * b))  # sum_i a_i * a_rev(i)
    np.testing.assert_allclose(a.grad, 2 * a.data[::-1], atol=1e-12)
