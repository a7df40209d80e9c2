import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import scdkit.tensor as tn
from scdkit.tensor import Tensor, ShapeError, grad_check


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(lo, hi, shape))


def test_sigmoid_symmetry():
    assert tn.sigmoid(Tensor([0.0])).data[0] == 0.5


def test_softmax_uniform_on_equal_inputs():
    out = tn.softmax(Tensor([2.5, 2.5, 2.5]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_normalized_and_positive():
    rng = np.random.default_rng(1)
    for _ in range(20):
        out = tn.softmax(Tensor(rng.normal(0, 5, (4, 7))), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(out > 0)


def test_layer_norm_constant_vector_is_zero_before_affine():
    x = Tensor(np.full((3, 8), 4.2))
    gain = Tensor(np.ones(8))
    bias = Tensor(np.zeros(8))
    out = tn.layer_norm(x, gain, bias)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_determinism_bit_identical():
    x = rand((5, 6), seed=3)
    a = tn.gelu(tn.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))).data
    b = tn.gelu(tn.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))).data
    assert np.array_equal(a, b)


def test_shape_error_names_operation():
    with pytest.raises(ShapeError, match="matmul"):
        tn.matmul(rand((2, 3)), rand((4, 2)))
    with pytest.raises(ShapeError, match="add"):
        tn.add(rand((2, 3)), rand((3, 2)))


def test_grad_check_quadratic_is_tight():
    err = grad_check(lambda x: tn.sum_all(tn.mul(x, x)), rand((3, 4)), eps=1e-5)
    assert err < 1e-7


@pytest.mark.parametrize("name,fn,shapes", [
    ("add", lambda a, b: tn.sum_all(tn.mul(tn.add(a, b), tn.add(a, b))), [(3, 4), (3, 4)]),
    ("sub", lambda a, b: tn.sum_all(tn.mul(tn.sub(a, b), a)), [(3, 4), (3, 4)]),
    ("mul", lambda a, b: tn.sum_all(tn.mul(a, b)), [(2, 5), (2, 5)]),
    ("matmul", lambda a, b: tn.sum_all(tn.tanh(tn.matmul(a, b))), [(3, 4), (4, 2)]),
    ("tensordot", lambda a, w: tn.sum_all(tn.sigmoid(tn.tensordot_last(a, w))),
     [(2, 3, 4), (4, 5)]),
    ("pairwise_add", lambda a, b: tn.sum_all(tn.gelu(tn.pairwise_add(a, b))),
     [(3, 4), (2, 4)]),
    ("softmax", lambda x: tn.sum_all(tn.mul(tn.softmax(x, -1), x)), [(3, 5)]),
    ("log_softmax", lambda x: tn.sum_all(tn.mul(tn.log_softmax(x, -1), x)), [(3, 5)]),
    ("sigmoid", lambda x: tn.sum_all(tn.sigmoid(x)), [(4, 4)]),
    ("tanh", lambda x: tn.sum_all(tn.tanh(x)), [(4, 4)]),
    ("gelu", lambda x: tn.sum_all(tn.gelu(x)), [(4, 4)]),
    ("exp", lambda x: tn.sum_all(tn.exp(x)), [(3, 3)]),
    ("mean", lambda x: tn.mean_all(tn.mul(x, x)), [(6,)]),
    ("concat", lambda a, b: tn.sum_all(tn.tanh(tn.concat([a, b], axis=0))),
     [(2, 3), (4, 3)]),
    ("narrow", lambda x: tn.sum_all(tn.mul(tn.narrow(x, 1, 1, 2),
                                           tn.narrow(x, 1, 0, 2))), [(3, 4)]),
    ("transpose", lambda x: tn.sum_all(tn.matmul(x, tn.transpose(x))), [(3, 4)]),
    ("reshape", lambda x: tn.sum_all(tn.tanh(tn.reshape(x, (2, 6)))), [(3, 4)]),
    ("scale_by", lambda x, s: tn.sum_all(tn.scale_by(x, s)), [(3, 4), (1,)]),
    ("add_bias", lambda x, b: tn.sum_all(tn.sigmoid(tn.add_bias(x, b))),
     [(3, 4), (4,)]),
    ("layer_norm", lambda x, g, b: tn.sum_all(tn.mul(tn.layer_norm(x, g, b),
                                                     tn.layer_norm(x, g, b))),
     [(3, 6), (6,), (6,)]),
    ("pow", lambda x: tn.sum_all(tn.pow_scalar(tn.add_scalar(x, 2.0), 0.5)),
     [(3, 3)]),
])
def test_primitive_gradients(name, fn, shapes):
    for seed in range(3):
        points = [rand(s, seed=seed * 13 + i) for i, s in enumerate(shapes)]
        assert grad_check(fn, points, eps=1e-5) < 1e-4, name


def test_gather_gradients():
    idx = np.array([0, 2, 2, 1])
    err = grad_check(lambda x: tn.sum_all(tn.tanh(tn.gather_rows(x, idx))),
                     rand((3, 4), seed=5))
    assert err < 1e-4
    idx2 = np.array([[0, 1], [4, 1]])
    err = grad_check(lambda x: tn.sum_all(tn.mul(tn.gather(x, idx2),
                                                 tn.gather(x, idx2))),
                     rand((5,), seed=6))
    assert err < 1e-4


def test_log_gradient_positive_domain():
    err = grad_check(lambda x: tn.sum_all(tn.log(x)),
                     rand((4,), seed=7, lo=0.3, hi=1.0))
    assert err < 1e-4


def test_clamp_passes_gradient_inside():
    x = Tensor([0.2, 0.8], requires_grad=True)
    out = tn.sum_all(tn.clamp(x, 1e-7, 1 - 1e-7))
    out.backward()
    np.testing.assert_allclose(x.grad, 1.0)


def test_no_grad_blocks_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with tn.no_grad():
        out = tn.sigmoid(x)
    assert not out.requires_grad and out._parents == ()


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        rand((2, 2)).backward()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_softmax_sums_to_one_property(vals):
    out = tn.softmax(Tensor(vals)).data
    assert abs(out.sum() - 1.0) < 1e-12
    assert np.all(out > 0)


def test_grad_check_rejects_nonfinite():
    with np.errstate(invalid="ignore"):  # the NaN from log(-1) is the point
        with pytest.raises(FloatingPointError):
            grad_check(lambda x: tn.log(x), Tensor([-1.0]))
