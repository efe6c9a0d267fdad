import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from dcthisto import attention as A
from dcthisto import frequency as F
from dcthisto.attention import CgaConfig, TokenMap
from dcthisto.errors import ConfigError, NumericError
from dcthisto.rng import RngState
from dcthisto.tensor import Tensor


def weights_for(cfg, rng, std=0.5):
    return {k: Tensor(rng.normal(s, std=std)) for k, s in A.cga_param_shapes(cfg).items()}


# -- tokens -------------------------------------------------------------------


def test_single_position_is_channel_vector():
    x = np.array([[[1.0]], [[2.0]], [[3.0]]])
    tm = A.tokenize(Tensor(x))
    assert tm.tokens.data.tolist() == [[1.0, 2.0, 3.0]]
    assert tm.spatial == (1, 1)


def test_row_major_token_order():
    x = np.arange(8.0).reshape(2, 2, 2)  # (C, m, n)
    tm = A.tokenize(Tensor(x))
    expected = [x[:, 0, 0], x[:, 0, 1], x[:, 1, 0], x[:, 1, 1]]
    assert np.array_equal(tm.tokens.data, np.array(expected))


def test_untokenize_round_trip_bit_exact(nprng):
    x = nprng.normal(size=(2, 5, 3, 4))
    tm = A.tokenize(F.Spectrum2D(Tensor(x)))
    assert tm.length == 12 and tm.channels == 5
    assert np.array_equal(A.untokenize(tm).data, x)


# -- single head ---------------------------------------------------------------


def test_single_token_returns_v():
    v = np.array([[0.3, -1.2, 7.0]])
    out = A.attention_head(np.array([[5.0, 1.0]]), np.array([[-2.0, 3.0]]), v)
    assert np.array_equal(out.data, v)


def test_identical_keys_give_mean_of_values(nprng):
    q = nprng.normal(size=(5, 3))
    k = np.tile(nprng.normal(size=(1, 3)), (5, 1))
    v = nprng.normal(size=(5, 4))
    out = A.attention_head(q, k, v).data
    assert np.allclose(out, np.tile(v.mean(axis=0), (5, 1)), atol=1e-14)


def test_head_vs_direct_formula(nprng):
    q, k, v = nprng.normal(size=(3, 2)), nprng.normal(size=(3, 2)), nprng.normal(size=(3, 2))
    out, w = A.attention_head(q, k, v, return_weights=True)
    ref, ref_w = oracles.attention(q, k, v)
    assert np.abs(out.data - ref).max() < 1e-10
    assert np.abs(w.data - ref_w).max() < 1e-10


def test_attention_rows_sum_to_one(nprng):
    cfg = CgaConfig(channels=8, heads=4)
    tm = TokenMap(Tensor(nprng.normal(size=(3, 10, 8))), (2, 5))
    _, maps = A.cascaded_group_attention(tm, cfg, weights_for(cfg, RngState(0)), return_weights=True)
    assert len(maps) == 4
    for w in maps:
        assert np.abs(w.data.sum(axis=-1) - 1).max() < 1e-9


def test_nan_queries_are_numeric_error():
    q = np.array([[np.nan, 0.0], [1.0, 1.0]])
    with pytest.raises(NumericError):
        A.attention_head(q, np.ones((2, 2)), np.ones((2, 2)))


def test_chunked_inference_matches(monkeypatch, nprng):
    q, k, v = nprng.normal(size=(2, 37, 4)), nprng.normal(size=(2, 37, 4)), nprng.normal(size=(2, 37, 3))
    full = A.attention_head(q, k, v).data
    monkeypatch.setattr(A, "_CHUNK_THRESHOLD", 100)
    monkeypatch.setattr(A, "_CHUNK_ROWS", 8)
    chunked = A.attention_head(q, k, v).data
    assert np.abs(full - chunked).max() < 1e-13


# -- cascaded group attention ---------------------------------------------------


def test_heads_must_divide_channels():
    with pytest.raises(ConfigError):
        CgaConfig(channels=6, heads=4)


def test_h1_is_plain_self_attention(nprng):
    cfg = CgaConfig(channels=4, heads=1)
    w = weights_for(cfg, RngState(1))
    x = nprng.normal(size=(6, 4))
    out = A.cascaded_group_attention(TokenMap(Tensor(x), (2, 3)), cfg, w).tokens.data
    head, _ = oracles.attention(x @ w["attn.q0"].data, x @ w["attn.k0"].data, x @ w["attn.v0"].data)
    assert np.abs(out - head @ w["attn.proj"].data).max() < 1e-10


def test_zero_qk_gives_mean_token(nprng):
    cfg = CgaConfig(channels=4, heads=2)
    w = weights_for(cfg, RngState(2))
    for i in range(2):
        w[f"attn.q{i}"] = Tensor(np.zeros((2, 2)))
        w[f"attn.k{i}"] = Tensor(np.zeros((2, 2)))
    x = nprng.normal(size=(5, 4))
    out = A.cascaded_group_attention(TokenMap(Tensor(x), (1, 5)), cfg, w).tokens.data
    head0 = np.tile(x[:, :2].mean(0) @ w["attn.v0"].data, (5, 1))
    head1 = np.tile((x[:, 2:] + head0).mean(0) @ w["attn.v1"].data, (5, 1))
    expected = np.concatenate([head0, head1], 1) @ w["attn.proj"].data
    assert np.abs(out - expected).max() < 1e-12


def test_two_head_cascade_vs_unrolled_oracle(nprng):
    cfg = CgaConfig(channels=4, heads=2)
    w = weights_for(cfg, RngState(3))
    x = nprng.normal(size=(2, 4))
    out = A.cascaded_group_attention(TokenMap(Tensor(x), (1, 2)), cfg, w).tokens.data
    ref = oracles.cga_two_heads(
        x,
        [w["attn.q0"].data, w["attn.q1"].data],
        [w["attn.k0"].data, w["attn.k1"].data],
        [w["attn.v0"].data, w["attn.v1"].data],
        w["attn.proj"].data,
    )
    assert np.abs(out - ref).max() < 1e-10


def test_output_projection_changes_width(nprng):
    cfg = CgaConfig(channels=4, heads=2, out_channels=7)
    out = A.cascaded_group_attention(TokenMap(Tensor(nprng.normal(size=(6, 4))), (2, 3)), cfg, weights_for(cfg, RngState(0)))
    assert out.tokens.shape == (6, 7)


@given(st.integers(0, 2**32), st.integers(2, 9))
def test_permutation_equivariance_h1(seed, length):
    rng = RngState(seed)
    cfg = CgaConfig(channels=3, heads=1)
    w = weights_for(cfg, rng.split("w"))
    x = rng.split("x").normal((length, 3))
    perm = rng.split("p").permutation(length)
    out = A.cascaded_group_attention(TokenMap(Tensor(x), (1, length)), cfg, w).tokens.data
    out_p = A.cascaded_group_attention(TokenMap(Tensor(x[perm]), (1, length)), cfg, w).tokens.data
    assert np.abs(out_p - out[perm]).max() < 1e-10


# -- full branch ---------------------------------------------------------------


def branch_weights(cfg, rng):
    return A.init_branch_params(cfg, rng)


def test_identity_like_weights_compose(nprng):
    c, m, n = 3, 4, 6
    cfg = CgaConfig(channels=c, heads=1)
    w = branch_weights(cfg, RngState(0))
    w["attn.q0"] = Tensor(np.zeros((c, c)))
    w["attn.k0"] = Tensor(np.zeros((c, c)))
    w["attn.v0"] = Tensor(np.eye(c))
    w["attn.proj"] = Tensor(np.eye(c))
    x = nprng.normal(size=(c, m, n))
    out = A.dct_attention_branch(x, 1, cfg, w).data
    s = F.dc_normalize(F.dct2d(x), np.ones(c), np.zeros(c)).numpy()
    mixed = np.broadcast_to(s.mean(axis=(1, 2), keepdims=True), s.shape)
    expected = F.idct2d(F.Spectrum2D(Tensor(mixed.copy()))).data
    assert np.abs(out - expected).max() < 1e-12


def test_full_crop_gives_constant_image(nprng):
    c, m = 4, 8
    cfg = CgaConfig(channels=c, heads=2)
    w = branch_weights(cfg, RngState(1))
    out = A.dct_attention_branch(nprng.normal(size=(c, m, m)), m, cfg, w, target=(m, m)).data
    assert out.shape == (c, m, m)
    assert np.abs(out - out[:, :1, :1]).max() < 1e-12


@given(st.integers(0, 2**32), st.sampled_from([(1, 1), (2, 2), (2, 4), (4, 2)]), st.sampled_from([1, 2]))
def test_branch_output_shape(seed, r_stride, heads):
    r, stride = r_stride
    rng = RngState(seed)
    c, size = 4, 8
    cfg = CgaConfig(channels=c, heads=heads, out_channels=6)
    target = (size // stride, size // stride)
    out = A.dct_attention_branch(rng.normal((2, c, size, size)), r, cfg, branch_weights(cfg, rng), target=target)
    assert out.shape == (2, 6) + target
