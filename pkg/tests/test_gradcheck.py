"""Finite-difference checks for every differentiable op and the full U-Net.

Per-op checks run at float64 against central differences (rel err < 1e-5,
>= 5 random instances each). The end-to-end check compares float32 autodiff
gradients against float64 finite differences (rel err < 1e-3).
"""

import numpy as np
import pytest

from conftest import fd_coords, fd_grad, rel_err
from minidiffusion import Rng, Tensor, UNet, UNetConfig
from minidiffusion.tensor import (
    add,
    conv2d,
    embedding_lookup,
    group_norm,
    linear,
    mul,
    relu,
    reshape,
    tmean,
    tsum,
    upsample_nearest2x,
)
from minidiffusion.unet import init_residual_params, residual_block

PER_OP_TOL = 1e-5
END_TO_END_TOL = 1e-3
SEEDS = [0, 1, 2, 3, 4]


def check_op(build_inputs, apply_op, seed, tol=PER_OP_TOL, h=1e-5, max_coords=150):
    """Compare autodiff grads of sum(op(inputs) * R) with finite differences."""
    rng = Rng(seed)
    arrays = build_inputs(rng)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    probe = rng.standard_normal(apply_op(*tensors).shape)

    def loss_tensors():
        return tsum(mul(apply_op(*tensors), Tensor(probe)))

    loss_tensors().backward()
    for tensor, array in zip(tensors, arrays):
        coords = fd_coords(array, max_coords, seed=seed + 31)
        fd = fd_grad(lambda: loss_tensors().item(), array, h=h, coords=coords)
        err = rel_err(tensor.grad.reshape(-1)[coords], fd.reshape(-1)[coords])
        assert err < tol, f"seed {seed}: {err}"


@pytest.mark.parametrize("seed", SEEDS)
def test_add_broadcast_gradient(seed):
    check_op(
        lambda r: [r.standard_normal((2, 3, 4, 4)), r.standard_normal((2, 3, 1, 1))],
        add,
        seed,
    )


@pytest.mark.parametrize("seed", SEEDS)
def test_mul_gradient(seed):
    check_op(
        lambda r: [r.standard_normal((3, 5)), r.standard_normal((3, 5))],
        mul,
        seed,
    )


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradient(seed):
    # keep inputs away from the kink at 0
    def build(r):
        x = r.standard_normal((4, 6))
        x = np.where(np.abs(x) < 0.05, 0.2, x)
        return [x]

    check_op(build, relu, seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_mean_gradient(seed):
    check_op(lambda r: [r.standard_normal((3, 4, 2))], tmean, seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_reshape_gradient(seed):
    check_op(lambda r: [r.standard_normal((2, 6))], lambda x: reshape(x, (2, 6, 1, 1)), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_linear_gradient(seed):
    check_op(
        lambda r: [r.standard_normal((4, 128)), r.standard_normal((256, 128)), r.standard_normal(256)],
        linear,
        seed,
    )


@pytest.mark.parametrize("seed", SEEDS)
def test_conv2d_gradient(seed):
    # shapes from the op contract; h=1e-3 still passes since conv is linear
    check_op(
        lambda r: [r.standard_normal((1, 2, 5, 5)), r.standard_normal((3, 2, 3, 3)), r.standard_normal(3)],
        conv2d,
        seed,
        h=1e-3,
    )


@pytest.mark.parametrize("seed", SEEDS)
def test_conv2d_strided_padded_gradient(seed):
    check_op(
        lambda r: [r.standard_normal((2, 3, 6, 6)), r.standard_normal((4, 3, 3, 3)), r.standard_normal(4)],
        lambda x, w, b: conv2d(x, w, b, stride=2, padding=1),
        seed,
    )


@pytest.mark.parametrize("seed", SEEDS)
def test_group_norm_gradient(seed):
    check_op(
        lambda r: [r.standard_normal((1, 4, 3, 3))],
        lambda x: group_norm(x, num_groups=2),
        seed,
    )


@pytest.mark.parametrize("seed", SEEDS)
def test_upsample_gradient(seed):
    check_op(lambda r: [r.standard_normal((2, 3, 4, 4))], upsample_nearest2x, seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_embedding_gradient(seed):
    idx = Rng(seed + 100).randint(0, 6, 9)
    check_op(
        lambda r: [r.standard_normal((6, 8))],
        lambda table: embedding_lookup(table, idx),
        seed,
    )


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_residual_block_gradient(seed):
    # both shortcut variants: identity and learned 1x1 projection
    for in_ch, out_ch in [(32, 32), (32, 64)]:
        params: dict = {}
        init_residual_params(params, Rng(seed), "block", in_ch, out_ch, dtype=np.float64)
        x = Rng(seed + 7).standard_normal((1, in_ch, 3, 3))
        probe = Rng(seed + 9).standard_normal((1, out_ch, 3, 3))

        def loss():
            return tsum(mul(residual_block(params, "block", Tensor(x)), Tensor(probe)))

        loss().backward()
        for name, p in params.items():
            # small h: larger steps can push post-norm activations across the
            # relu kink, which breaks the central-difference model
            coords = fd_coords(p.data, 60, seed=seed + 17)
            fd = fd_grad(lambda: loss().item(), p.data, h=1e-6, coords=coords)
            err = rel_err(p.grad.reshape(-1)[coords], fd.reshape(-1)[coords])
            assert err < PER_OP_TOL, f"{name}: {err}"
            p.zero_grad()


def _unet_pair(seed):
    """Same parameters as float32 (autodiff side) and float64 (oracle side)."""
    cfg = UNetConfig(io_channels=1, model_channels=32)
    net32 = UNet(cfg, Rng(seed))
    net64 = UNet.from_arrays(cfg, {k: v.astype(np.float64) for k, v in net32.param_arrays().items()}, dtype=np.float64)
    return cfg, net32, net64


def test_full_unet_gradients_vs_finite_differences():
    cfg, net32, net64 = _unet_pair(5)
    rng = Rng(99)
    x = rng.standard_normal((2, 1, 8, 8))
    t = np.array([3, 11])

    def loss_of(net, dtype):
        out = net.predict(Tensor(x.astype(dtype)), t)
        return tmean(mul(out, out))

    loss_of(net32, np.float32).backward()

    coord_rng = Rng(1234)
    for name, p32 in net32.params.items():
        assert p32.grad is not None, f"no gradient reached {name}"
        p64 = net64.params[name].data
        flat64 = p64.reshape(-1)
        flat_grad = p32.grad.reshape(-1)
        # spot-check a few coordinates per parameter tensor with a float64 oracle
        coords = coord_rng.randint(0, flat64.size, 4)
        h = 1e-5
        for j in np.unique(coords):
            orig = flat64[j]
            flat64[j] = orig + h
            fp = loss_of(net64, np.float64).item()
            flat64[j] = orig - h
            fm = loss_of(net64, np.float64).item()
            flat64[j] = orig
            fd = (fp - fm) / (2 * h)
            scale = max(abs(fd), float(np.abs(flat_grad).max()), 1e-3)
            assert abs(flat_grad[j] - fd) / scale < END_TO_END_TOL, (
                f"{name}[{j}]: autodiff {flat_grad[j]}, fd {fd}"
            )
