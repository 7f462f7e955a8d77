"""Tensor core: op semantics, gradients vs finite differences, determinism,
and the checkpoint format."""

import numpy as np
import pytest

from helpers import gradcheck
from rapnet import tensor as T
from rapnet.backend import conv1d_out_length
from rapnet.checkpoint import load_checkpoint, save_checkpoint
from rapnet.layers import BatchNorm1d, Parameter
from rapnet.tensor import ShapeError, Tensor


def leaf(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- matmul

def test_matmul_identity():
    x = np.arange(12.0).reshape(3, 4)
    out = T.matmul(Tensor(np.eye(3)), Tensor(x))
    assert np.array_equal(out.data, x)


def test_matmul_1x1():
    out = T.matmul(Tensor([[2.0]]), Tensor([[3.0]]))
    assert out.data.reshape(()) == 6.0


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros((4, 5))), Tensor(np.zeros((4, 3))))
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros(4)), Tensor(np.zeros((4, 3))))


def test_matmul_gradcheck():
    rng = np.random.default_rng(7)
    a = leaf(rng.standard_normal((4, 5)))
    b = leaf(rng.standard_normal((5, 3)))
    w = rng.standard_normal((4, 3))  # fixed projection to a scalar
    gradcheck(lambda: (T.matmul(a, b) * w).sum(), [a, b], rtol=1e-6,
              n_coords=10)


# ---------------------------------------------------------------- conv1d

def test_conv1d_delta_kernel():
    x = leaf(np.random.default_rng(0).standard_normal((3, 10)))
    w = Tensor(np.eye(3).reshape(3, 3, 1))
    out = T.conv1d(x, w, stride=1, padding=0)
    assert np.array_equal(out.data, x.data)


def test_conv1d_stride2_halves():
    x = Tensor(np.zeros((2, 128)))
    w = Tensor(np.zeros((4, 2, 3)))
    assert T.conv1d(x, w, stride=2, padding=1).shape == (4, 64)


def test_conv1d_length_law():
    for t in range(1, 257):
        got = conv1d_out_length(t, 3, 2, 1)
        assert got == (t + 2 - 3) // 2 + 1
        out = T.conv1d(Tensor(np.ones((1, t))), Tensor(np.ones((1, 1, 3))),
                       stride=2, padding=1)
        assert out.shape == (1, got)


def test_conv1d_empty_output_error():
    with pytest.raises(ShapeError):
        T.conv1d(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 1, 5))),
                 stride=1, padding=0)


def test_conv1d_even_kernel_error():
    with pytest.raises(ShapeError):
        T.conv1d(Tensor(np.ones((1, 8))), Tensor(np.ones((1, 1, 2))))


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0), (3, 2)])
def test_conv1d_gradcheck(stride, padding):
    rng = np.random.default_rng(11 + stride + padding)
    x = leaf(rng.standard_normal((3, 14)))
    w = leaf(rng.standard_normal((5, 3, 3)))
    proj = rng.standard_normal((5, conv1d_out_length(14, 3, stride, padding)))
    gradcheck(lambda: (T.conv1d(x, w, stride, padding) * proj).sum(),
              [x, w], rtol=1e-5, n_coords=8)


# ----------------------------------------------------------- elementwise

def test_relu_sigmoid_values():
    assert Tensor([-1.0]).relu().data[0] == 0.0
    assert Tensor([0.0]).sigmoid().data[0] == 0.5


def test_concat_channels():
    a = Tensor(np.ones((6, 4)))
    b = Tensor(np.zeros((6, 4)))
    out = T.concat([a, b], axis=1)
    assert out.shape == (6, 8)
    with pytest.raises(ShapeError):
        T.concat([a, Tensor(np.zeros((5, 4)))], axis=1)


def test_elementwise_gradchecks():
    rng = np.random.default_rng(3)
    for seed in range(5):
        x = leaf(rng.standard_normal((4, 6)) * 0.8)
        y = leaf(rng.standard_normal((4, 6)) * 0.8 + 2.5)
        proj = rng.standard_normal((4, 6))

        def loss():
            z = (x.sigmoid() * y.exp() + (x * x + 1.0).log()
                 + x.softplus() + (y + 0.1).sqrt() + x.maximum(y) * 0.5
                 + x.minimum(0.3) + (x - 0.2).smooth_l1())
            return (z * proj).sum()
        gradcheck(loss, [x, y], rtol=1e-4, n_coords=6, seed=seed)


def test_broadcast_add_mul_grads():
    rng = np.random.default_rng(5)
    x = leaf(rng.standard_normal((4, 7)))
    b = leaf(rng.standard_normal((4, 1)))
    s = leaf(rng.standard_normal(()))
    proj = rng.standard_normal((4, 7))
    gradcheck(lambda: ((x + b) * s * proj).sum(), [x, b, s], rtol=1e-6)


def test_div_grad():
    rng = np.random.default_rng(6)
    a = leaf(rng.standard_normal((3, 3)))
    b = leaf(rng.standard_normal((3, 3)) + 4.0)
    gradcheck(lambda: (a / b).sum(), [a, b], rtol=1e-6)


# ------------------------------------------------------------- batchnorm

def test_batchnorm_constant_channel_gives_beta():
    bn = BatchNorm1d(3)
    bn.beta.data = np.array([1.0, -2.0, 0.5])
    x = Tensor(np.ones((3, 16)) * np.array([[4.0], [0.0], [-7.0]]))
    out = bn(x)
    assert np.allclose(out.data, bn.beta.data[:, None], atol=1e-6)


def test_batchnorm_training_standardizes():
    rng = np.random.default_rng(9)
    # large-variance data so the epsilon bias stays under the tolerance
    x = Tensor(rng.standard_normal((4, 64)) * 20.0)
    out = BatchNorm1d(4)(x)
    assert np.abs(out.data.mean(axis=1)).max() < 1e-6
    assert np.abs(out.data.var(axis=1) - 1.0).max() < 1e-6


def test_batchnorm_running_stats_and_eval():
    rng = np.random.default_rng(10)
    bn = BatchNorm1d(2)
    x = rng.standard_normal((2, 32)) + np.array([[3.0], [-1.0]])
    for _ in range(200):
        bn(Tensor(x))
    bn.set_training(False)
    out = bn(Tensor(x))
    # converged running stats reproduce training-mode standardization
    assert np.abs(out.data.mean(axis=1)).max() < 1e-3
    # eval mode must not touch the running stats
    before = bn.running_mean.copy()
    bn(Tensor(x))
    assert np.array_equal(before, bn.running_mean)


def test_batchnorm_gradcheck():
    rng = np.random.default_rng(12)
    bn = BatchNorm1d(3)
    bn.gamma.data = rng.standard_normal(3)
    bn.beta.data = rng.standard_normal(3)
    x = leaf(rng.standard_normal((3, 9)))
    proj = rng.standard_normal((3, 9))
    gradcheck(lambda: (bn(x) * proj).sum(), [x, bn.gamma, bn.beta],
              rtol=1e-4, atol=1e-7, n_coords=8)


# ------------------------------------------------------------ reductions

def test_reduce_mean_values():
    assert Tensor([1.0, 2.0, 3.0]).mean().item() == 2.0
    x = Tensor(np.arange(12.0).reshape(6, 2))
    assert x.mean(axis=0).shape == (2,)


def test_reduce_mean_grad_is_uniform():
    x = leaf(np.arange(5.0))
    T.backward(x.mean())
    assert np.allclose(x.grad, np.full(5, 0.2))


# -------------------------------------------------------------- upsample

def test_upsample_constant():
    out = T.upsample_linear(Tensor(np.full((3, 5), 2.5)), 2)
    assert out.shape == (3, 10)
    assert np.allclose(out.data, 2.5)


def test_upsample_hand_interpolation():
    out = T.upsample_linear(Tensor([[0.0, 2.0]]), 2)
    assert np.allclose(out.data, [[0.0, 2.0 / 3, 4.0 / 3, 2.0]])


def test_upsample_gradcheck():
    rng = np.random.default_rng(13)
    x = leaf(rng.standard_normal((2, 6)))
    proj = rng.standard_normal((2, 12))
    gradcheck(lambda: (T.upsample_linear(x, 2) * proj).sum(), [x], rtol=1e-6)


# -------------------------------------------------------------- backward

def test_backward_square():
    x = leaf([3.0])
    T.backward((x * x).sum())
    assert x.grad[0] == 6.0


def test_backward_chain_gradcheck():
    rng = np.random.default_rng(14)
    w = leaf(rng.standard_normal((3, 4)))
    x = leaf(rng.standard_normal((4, 2)))
    gradcheck(lambda: T.matmul(w, x).sigmoid().sum(), [w, x], rtol=1e-5)


def test_second_backward_errors():
    x = leaf([2.0])
    loss = (x * x).sum()
    T.backward(loss)
    with pytest.raises(RuntimeError):
        T.backward(loss)


def test_backward_nonscalar_errors():
    x = leaf([1.0, 2.0])
    with pytest.raises(ShapeError):
        T.backward(x * 2.0)


def test_backward_nonfinite_errors():
    x = leaf([800.0])
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        T.backward(x.exp().sum())


def test_finite_check_mode():
    T.set_finite_checks(True)
    try:
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            Tensor([800.0]).exp()
    finally:
        T.set_finite_checks(False)


def test_no_grad_skips_graph():
    x = leaf([1.0])
    with T.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._backward is None


# --------------------------------------------- randomized gradient sweep

def test_gradcheck_many_random_shapes():
    """Every differentiable op family at >= 20 random small shapes."""
    rng = np.random.default_rng(42)
    for trial in range(20):
        p, q, r = rng.integers(1, 5, size=3)
        a = leaf(rng.standard_normal((p, q)))
        b = leaf(rng.standard_normal((q, r)))
        proj = rng.standard_normal((p, r))
        gradcheck(lambda: (T.matmul(a, b).sigmoid() * proj).sum(), [a, b],
                  rtol=1e-4, n_coords=4, seed=trial)

        c_in, t = int(rng.integers(1, 4)), int(rng.integers(3, 12))
        c_out = int(rng.integers(1, 4))
        x = leaf(rng.standard_normal((c_in, t)))
        w = leaf(rng.standard_normal((c_out, c_in, 3)))
        gradcheck(lambda: T.conv1d(x, w, 1, 1).relu().sum(), [x, w],
                  rtol=1e-4, n_coords=4, seed=trial)


# ------------------------------------------------------------ determinism

def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(123)
        x = leaf(rng.standard_normal((4, 8)))
        w = leaf(rng.standard_normal((4, 4, 3)))
        out = T.conv1d(x, w, 1, 1).sigmoid()
        loss = (out * out).sum()
        T.backward(loss)
        return out.data.copy(), x.grad.copy(), w.grad.copy()

    a = run()
    b = run()
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


# ------------------------------------------------------------- invariants

def test_tensor_is_float64_and_shape_consistent():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64
    assert int(np.prod(t.shape)) == t.data.size


# ------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {
        "a.weight": rng.standard_normal((3, 4, 5)),
        "b.bias": rng.standard_normal(7),
        "bn.running_mean": rng.standard_normal(4),
    }
    path = tmp_path / "model.rapw"
    save_checkpoint(path, arrays)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(arrays)
    for k in arrays:
        assert np.array_equal(loaded[k], arrays[k])


def test_checkpoint_wire_format(tmp_path):
    path = tmp_path / "one.rapw"
    save_checkpoint(path, {"w": np.array([[1.0, 2.0]])})
    blob = path.read_bytes()
    assert blob[:4] == b"RAPW"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:10], "little") == 1  # name length
    assert blob[10:11] == b"w"
    assert blob[11] == 2  # rank
    assert int.from_bytes(blob[12:16], "little") == 1
    assert int.from_bytes(blob[16:20], "little") == 2
    assert np.frombuffer(blob[20:36], dtype="<f8").tolist() == [1.0, 2.0]


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.rapw"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_parameter_decay_flag():
    w = Parameter(np.ones((2, 2)))
    b = Parameter(np.zeros(2), decay=False)
    assert w.decay and not b.decay
