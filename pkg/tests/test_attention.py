import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import softmax as sp_softmax

from ewt import tensor as T
from ewt.attention import (
    MASK_VALUE,
    WindowAttention,
    build_attn_mask,
    cyclic_shift,
    relative_position_index,
    window_partition,
    window_reverse,
    wmsa,
)
from ewt.errors import ContractError, DimensionError
from ewt.gradcheck import check_gradients
from ewt.tensor import Tensor


def oracle_mask(H, W, ws, s):
    """Masked iff the roll wrapped one token of the pair around the border and not the other."""
    nw = (H // ws) * (W // ws)
    out = np.zeros((nw, ws * ws, ws * ws), dtype=bool)
    k = 0
    for wi in range(H // ws):
        for wj in range(W // ws):
            wrapped = [(wi * ws + a + s >= H, wj * ws + b + s >= W) for a in range(ws) for b in range(ws)]
            for p, f1 in enumerate(wrapped):
                for q, f2 in enumerate(wrapped):
                    out[k, p, q] = f1 != f2
            k += 1
    return out


def test_mask_pair_count_8x8():
    m = build_attn_mask(8, 8, 8, 4).mask.data
    assert m.shape == (1, 64, 64)
    assert int(np.sum(m == MASK_VALUE)) == 3072


@pytest.mark.parametrize("H,W,ws,s", [(8, 8, 8, 4), (16, 16, 8, 4), (8, 12, 4, 2), (12, 12, 4, 1), (6, 6, 2, 1)])
def test_mask_matches_oracle(H, W, ws, s):
    m = build_attn_mask(H, W, ws, s).mask.data
    np.testing.assert_array_equal(m == MASK_VALUE, oracle_mask(H, W, ws, s))
    assert set(np.unique(m)) <= {0.0, MASK_VALUE}


def test_unshifted_mask_is_empty():
    assert not np.any(build_attn_mask(16, 16, 8, 0).mask.data)


def test_bad_shift_rejected():
    with pytest.raises(ContractError):
        build_attn_mask(8, 8, 8, 8)
    with pytest.raises(ContractError):
        build_attn_mask(8, 8, 8, -1)
    with pytest.raises(DimensionError):
        build_attn_mask(10, 8, 8, 4)


def test_relative_position_index():
    idx = relative_position_index(4)
    assert idx.shape == (16, 16)
    assert idx.min() == 0 and idx.max() == 48
    assert np.all(np.diag(idx) == 24)
    np.testing.assert_array_equal(idx + idx.T, 48)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.sampled_from([2, 4]), st.integers(0, 3))
def test_partition_reverse_and_shift_roundtrip(hw, ww, ws, s):
    x = np.random.default_rng(hw * 7 + ww).standard_normal((2, hw * ws, ww * ws, 3))
    t = Tensor(x, dtype="float64")
    g = window_partition(t, ws)
    assert g.windows.shape == (2 * hw * ww, ws * ws, 3)
    np.testing.assert_array_equal(window_reverse(g).data, x)
    np.testing.assert_array_equal(cyclic_shift(cyclic_shift(t, s), -s).data, x)


def test_partition_is_row_major_within_windows():
    x = np.arange(16.0).reshape(1, 4, 4, 1)
    w = window_partition(Tensor(x), 2).windows.data[..., 0]
    np.testing.assert_array_equal(w[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(w[1], [2, 3, 6, 7])


def _random_attention(dim, heads, ws, seed):
    rng = np.random.default_rng(seed)
    p = WindowAttention(dim, heads, ws, rng)
    p.rel_bias.data[...] = rng.standard_normal(p.rel_bias.shape)
    return p


def naive_wmsa(x, p: WindowAttention, ws, s):
    """Token-by-token reference: each token attends to the unmasked members of its shifted window."""
    n, H, W, D = x.shape
    heads, hd = p.heads, D // p.heads
    wq, bq = p.qkv.w.data, p.qkv.b.data
    qkv = x @ wq + bq
    q, k, v = qkv[..., :D], qkv[..., D : 2 * D], qkv[..., 2 * D :]
    table = p.rel_bias.data
    out = np.zeros_like(x)
    for b in range(n):
        for i in range(H):
            for j in range(W):
                # position inside the rolled map, and the window it belongs to
                si, sj = (i - s) % H, (j - s) % W
                wi, wj = si // ws, sj // ws
                members = []
                for a in range(ws):
                    for c in range(ws):
                        ui, uj = wi * ws + a + s, wj * ws + c + s
                        oi, oj = ui % H, uj % W
                        if (ui >= H) == (si + s >= H) and (uj >= W) == (sj + s >= W):
                            members.append((oi, oj, a, c))
                ai, aj = si % ws, sj % ws
                for h in range(heads):
                    sl = slice(h * hd, (h + 1) * hd)
                    scores = []
                    for oi, oj, a, c in members:
                        rel = (ai - a + ws - 1) * (2 * ws - 1) + (aj - c + ws - 1)
                        scores.append(q[b, i, j, sl] @ k[b, oi, oj, sl] * hd**-0.5 + table[rel, h])
                    w = sp_softmax(np.array(scores))
                    out[b, i, j, sl] = sum(wt * v[b, oi, oj, sl] for wt, (oi, oj, _, _) in zip(w, members))
    return out @ p.proj.w.data + p.proj.b.data


@pytest.mark.parametrize("H,W,ws,s", [(8, 8, 4, 0), (8, 8, 4, 2), (8, 4, 4, 1), (6, 6, 2, 1)])
def test_wmsa_matches_naive_reference(H, W, ws, s, f64):
    p = _random_attention(4, 2, ws, 3)
    x = np.random.default_rng(4).standard_normal((2, H, W, 4))
    out = wmsa(Tensor(x), p, ws, s).data
    np.testing.assert_allclose(out, naive_wmsa(x, p, ws, s), atol=1e-10)


def test_masked_weights_vanish():
    p = _random_attention(8, 2, 8, 0)
    x = Tensor(np.random.default_rng(1).standard_normal((1, 8, 8, 8)))
    mask = build_attn_mask(8, 8, 8, 4)
    _, attn = wmsa(x, p, 8, 4, mask, return_attn=True)
    masked = np.broadcast_to(mask.mask.data[:, None] == MASK_VALUE, attn.shape)
    assert masked.sum() == 3072 * 2
    assert attn.data[masked].max() < 1e-8
    np.testing.assert_allclose(attn.data.sum(-1), 1.0, atol=1e-5)


def test_unshifted_attention_is_window_local(f64):
    p = _random_attention(4, 1, 4, 2)
    x = np.random.default_rng(5).standard_normal((1, 8, 8, 4))
    base = wmsa(Tensor(x), p, 4, 0).data
    x2 = x.copy()
    x2[0, 1, 2] += 5.0  # inside the top-left window
    diff = np.abs(wmsa(Tensor(x2), p, 4, 0).data - base).max(axis=-1)[0]
    assert diff[:4, :4].max() > 0
    diff[:4, :4] = 0
    assert diff.max() == 0


def test_mask_dimension_mismatch():
    p = _random_attention(4, 1, 4, 0)
    with pytest.raises(DimensionError):
        wmsa(Tensor(np.zeros((1, 8, 8, 4))), p, 4, 2, build_attn_mask(16, 16, 4, 2))


def test_heads_must_divide_dim():
    with pytest.raises(ContractError):
        WindowAttention(6, 4, 4)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("shift", [0, 2])
def test_wmsa_gradients(seed, shift, f64):
    p = _random_attention(4, 2, 4, seed)
    rng = np.random.default_rng(50 + seed)
    x = Tensor(rng.standard_normal((1, 8, 8, 4)), requires_grad=True)
    r = Tensor(rng.standard_normal((1, 8, 8, 4)))
    tensors = {"x": x, "rel_bias": p.rel_bias, "qkv.w": p.qkv.w, "proj.b": p.proj.b}
    err = check_gradients(lambda: T.sum_all(T.mul(wmsa(x, p, 4, shift), r)), tensors, max_entries=48, seed=seed)
    assert max(err.values()) <= 1e-4, err
