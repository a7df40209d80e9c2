import numpy as np
import pytest

from scdkit.checkpoint import (checkpoint_digest, load_checkpoint,
                               save_checkpoint)
from scdkit.optim import AdamW, lr_schedule
from scdkit.tensor import Tensor


def test_zero_grad_zero_decay_leaves_params_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    opt = AdamW(peak_lr=0.1, warmup_steps=0, total_steps=10, weight_decay=0.0)
    before = p.data.copy()
    opt.step({"p": p})
    np.testing.assert_array_equal(p.data, before)


def test_single_step_descends_quadratic():
    w = Tensor(np.array([1.0]), requires_grad=True)
    w.grad = 2.0 * w.data  # d/dw of w^2
    opt = AdamW(peak_lr=1e-3, warmup_steps=0, total_steps=10, weight_decay=0.0)
    opt.step({"w": w})
    assert w.data[0] < 1.0


def test_schedule_endpoints():
    assert lr_schedule(0, 1.5, 100, 1000) == 0.0
    assert lr_schedule(100, 1.5, 100, 1000) == pytest.approx(1.5)
    assert lr_schedule(1000, 1.5, 100, 1000) == 0.0
    for s in range(0, 1001, 50):
        assert lr_schedule(s, 1.5, 100, 1000) >= 0.0


def test_nonfinite_gradient_names_parameter():
    p = Tensor(np.ones(2), requires_grad=True)
    p.grad = np.array([np.nan, 0.0])
    opt = AdamW()
    with pytest.raises(FloatingPointError, match="bad_param"):
        opt.step({"bad_param": p})


def test_moment_shapes_match_params():
    p = Tensor(np.ones((3, 2)), requires_grad=True)
    p.grad = np.ones((3, 2))
    opt = AdamW(peak_lr=1e-3, warmup_steps=0, total_steps=5)
    opt.step({"p": p})
    assert opt.m["p"].shape == (3, 2)
    assert opt.v["p"].shape == (3, 2)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a.w": rng.normal(size=(3, 4)), "b": rng.normal(size=(7,)),
              "scalar": np.array(3.25)}
    prefix = tmp_path / "ckpt"
    save_checkpoint(prefix, arrays, metadata={"kind": "test", "note": 1})
    loaded, meta = load_checkpoint(prefix)
    assert meta == {"kind": "test", "note": 1}
    assert set(loaded) == set(arrays)
    for k in arrays:
        assert np.array_equal(loaded[k], np.asarray(arrays[k], dtype=np.float64))
        assert loaded[k].dtype == np.float64


def test_checkpoint_digest_stable_and_sensitive(tmp_path):
    arrays = {"w": np.arange(6.0).reshape(2, 3)}
    save_checkpoint(tmp_path / "a", arrays)
    save_checkpoint(tmp_path / "b", arrays)
    assert checkpoint_digest(tmp_path / "a") == checkpoint_digest(tmp_path / "b")
    arrays["w"] = arrays["w"] + 1e-12
    save_checkpoint(tmp_path / "c", arrays)
    assert checkpoint_digest(tmp_path / "a") != checkpoint_digest(tmp_path / "c")
