import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from dcthisto import mobileconv as MC
from dcthisto.errors import ConfigError, DimensionError
from dcthisto.mobileconv import MobileBlockConfig
from dcthisto.rng import RngState
from dcthisto.tensor import Tensor


def test_pointwise_identity(nprng):
    x = nprng.normal(size=(4, 5, 6))
    w = np.eye(4)[:, :, None, None]
    assert np.array_equal(MC.conv2d(x, w).data, x)


def test_center_tap_identity(nprng):
    x = nprng.normal(size=(3, 5, 5))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    assert np.allclose(MC.conv2d(x, w).data, x, atol=0)
    dw = np.zeros((3, 3, 3))
    dw[:, 1, 1] = 1.0
    assert np.array_equal(MC.depthwise_conv2d(x, dw).data, x)


def test_conv2d_vs_six_loops(nprng):
    x, w = nprng.normal(size=(3, 5, 5)), nprng.normal(size=(4, 3, 3, 3))
    assert np.abs(MC.conv2d(x, w).data - oracles.conv2d_loops(x, w)).max() < 1e-12


@pytest.mark.parametrize("stride,k,size", [(2, 3, 7), (2, 5, 8), (1, 5, 6), (2, 1, 6)])
def test_conv2d_strided_vs_loops(stride, k, size, nprng):
    x, w = nprng.normal(size=(2, size, size)), nprng.normal(size=(3, 2, k, k))
    out = MC.conv2d(x, w, stride=stride).data
    assert np.abs(out - oracles.conv2d_loops(x, w, stride)).max() < 1e-12


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError, match="channels"):
        MC.conv2d(np.zeros((3, 4, 4)), np.zeros((2, 2, 3, 3)))


def test_even_kernel_rejected():
    with pytest.raises(DimensionError):
        MC.conv2d(np.zeros((1, 4, 4)), np.zeros((1, 1, 2, 2)))


def test_depthwise_box_kernel_stride2():
    x = np.full((1, 4, 4), 2.0)
    out = MC.depthwise_conv2d(x, np.ones((1, 3, 3)), stride=2, padding=0)
    # the only full 3x3 windows at stride 2 on 4x4 with no padding start at (0, 0)
    assert out.shape == (1, 1, 1) and out.data.item() == 18.0
    padded = MC.depthwise_conv2d(x, np.ones((1, 3, 3)), stride=2).data
    assert padded.shape == (1, 2, 2)
    # output (1, 1) sits over input rows/cols 1..3, fully interior
    assert padded[0, 1, 1] == 9 * 2.0


@pytest.mark.parametrize("stride", [1, 2])
def test_depthwise_vs_grouped_oracle(stride, nprng):
    x, w = nprng.normal(size=(4, 6, 7)), nprng.normal(size=(4, 3, 3))
    out = MC.depthwise_conv2d(x, w, stride=stride).data
    assert np.abs(out - oracles.depthwise_loops(x, w, stride)).max() < 1e-12


def test_depthwise_then_pointwise_equals_full_conv(nprng):
    cin, cout = 3, 4
    x = nprng.normal(size=(cin, 5, 5))
    dw, pw = nprng.normal(size=(cin, 3, 3)), nprng.normal(size=(cout, cin))
    sep = MC.conv2d(MC.depthwise_conv2d(x, dw), pw[:, :, None, None]).data
    full = pw[:, :, None, None] * dw[None]  # (cout, cin, 3, 3)
    assert np.abs(sep - MC.conv2d(x, full).data).max() < 1e-10


@given(
    st.integers(1, 12), st.integers(1, 12), st.sampled_from([1, 3, 5]), st.sampled_from([1, 2])
)
def test_shape_law(h, w, k, s):
    p = (k - 1) // 2
    if h + 2 * p < k or w + 2 * p < k:
        return
    out = MC.conv2d(np.zeros((1, 2, h, w)), np.zeros((3, 2, k, k)), stride=s)
    assert out.shape == (1, 3, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)


def test_batch_and_single_agree(nprng):
    x, w = nprng.normal(size=(2, 3, 5, 5)), nprng.normal(size=(4, 3, 3, 3))
    both = MC.conv2d(x, w).data
    assert np.array_equal(both[1], MC.conv2d(x[1], w).data)


# -- block -------------------------------------------------------------------


def identity_block_weights(c, e=1):
    cfg = MobileBlockConfig(c, c, expansion=e)
    w = MC.init_mobile_params(cfg, RngState(0))
    w["mobile.expand"] = Tensor(np.eye(c)[:, :, None, None])
    dw = np.zeros((c, 3, 3))
    dw[:, 1, 1] = 1.0
    w["mobile.dw"] = Tensor(dw)
    w["mobile.project"] = Tensor(np.eye(c)[:, :, None, None])
    return cfg, w


def test_block_identity_doubles(nprng):
    cfg, w = identity_block_weights(3)
    x = nprng.uniform(0, 5, size=(3, 6, 6))  # inside relu6's linear range
    out = MC.mobile_block(x, cfg, w).data
    assert np.allclose(out, 2 * x, atol=1e-14)


def test_block_stride2_halves():
    cfg = MobileBlockConfig(4, 8, stride=2)
    w = MC.init_mobile_params(cfg, RngState(1))
    assert not cfg.residual
    assert MC.mobile_block(np.zeros((2, 4, 10, 12)), cfg, w).shape == (2, 8, 5, 6)


def test_block_zero_weights_zero_output(nprng):
    cfg = MobileBlockConfig(3, 5)
    w = {k: Tensor(np.zeros(s)) for k, s in MC.mobile_param_shapes(cfg).items()}
    out = MC.mobile_block(nprng.normal(size=(3, 4, 4)), cfg, w)
    assert not out.data.any()


def test_residual_rule():
    assert MobileBlockConfig(4, 4).residual
    assert not MobileBlockConfig(4, 8).residual
    assert not MobileBlockConfig(4, 4, stride=2).residual


def test_block_config_validation():
    with pytest.raises(ConfigError):
        MobileBlockConfig(4, 4, stride=3)
    with pytest.raises(ConfigError):
        MobileBlockConfig(4, 4, kernel=4)
    with pytest.raises(ConfigError):
        MobileBlockConfig(4, 4, expansion=0)


def test_param_shapes_count():
    cfg = MobileBlockConfig(2, 3, expansion=4, kernel=3)
    shapes = MC.mobile_param_shapes(cfg)
    # expand 8*2, dw 8*9, project 3*8, affines 2*8 + 2*8 + 2*3
    assert sum(int(np.prod(s)) for s in shapes.values()) == 16 + 72 + 24 + 16 + 16 + 6
