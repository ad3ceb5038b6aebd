import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ewt.errors import DimensionError
from ewt.gradcheck import check_gradients
from ewt.tensor import Tensor, mul, sum_all
from ewt.wavelet import WaveletSubbands, dwt_haar, dwt_multi, dwt_stacked, iwt_haar, iwt_multi, iwt_stacked


def test_constant_block_goes_to_ll():
    s = dwt_haar(Tensor(np.ones((1, 1, 2, 2))))
    assert s.ll.data.item() == pytest.approx(2.0)
    for band in (s.lh, s.hl, s.hh):
        assert band.data.item() == pytest.approx(0.0)


def test_hand_computed_block():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    s = dwt_haar(Tensor(x, dtype="float64"))
    assert [b.data.item() for b in s.bands] == [5.0, 2.0, 1.0, 0.0]


def test_shapes():
    s = dwt_haar(Tensor(np.zeros((2, 3, 64, 64))))
    assert s.ll.shape == (2, 3, 32, 32)
    assert dwt_stacked(Tensor(np.zeros((2, 3, 64, 64)))).shape == (2, 12, 32, 32)
    assert dwt_multi(Tensor(np.zeros((1, 3, 64, 64))), 3).shape == (1, 192, 8, 8)


def test_channel_order_is_band_interleaved():
    x = np.random.default_rng(0).standard_normal((1, 2, 4, 4))
    stacked = dwt_stacked(Tensor(x, dtype="float64")).data
    second = dwt_haar(Tensor(x[:, 1:2], dtype="float64"))
    for band, ref in enumerate(second.bands):
        np.testing.assert_array_equal(stacked[:, 4 + band], ref.data[:, 0])


def test_odd_sizes_rejected():
    with pytest.raises(DimensionError):
        dwt_haar(Tensor(np.zeros((1, 1, 63, 64))))
    with pytest.raises(DimensionError):
        dwt_multi(Tensor(np.zeros((1, 1, 36, 36))), 3)
    with pytest.raises(DimensionError):
        dwt_multi(Tensor(np.zeros((1, 1, 8, 8))), 0)
    with pytest.raises(DimensionError):
        iwt_stacked(Tensor(np.zeros((1, 3, 4, 4))))


def test_subbands_must_agree():
    a = Tensor(np.zeros((1, 1, 2, 2)))
    with pytest.raises(DimensionError):
        WaveletSubbands(a, a, a, Tensor(np.zeros((1, 1, 2, 3))))


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2**31),
    st.integers(1, 3),
    st.integers(1, 3),
    st.integers(1, 3),
    st.sampled_from(["float32", "float64"]),
)
def test_roundtrip_and_energy(seed, level, hk, wk, dtype):
    x = np.random.default_rng(seed).standard_normal((2, 2, hk * 2**level, wk * 2**level))
    t = Tensor(x, dtype=dtype)
    y = dwt_multi(t, level)
    back = iwt_multi(y, level).data
    tol = 1e-6 if dtype == "float32" else 1e-12
    assert np.max(np.abs(back - t.data)) <= tol
    e = np.sum(t.data.astype(np.float64) ** 2)
    assert abs(e - np.sum(y.data.astype(np.float64) ** 2)) / e <= 1e-4


def test_subband_roundtrip(rng):
    x = rng.standard_normal((1, 3, 8, 6))
    np.testing.assert_allclose(iwt_haar(dwt_haar(Tensor(x, dtype="float64"))).data, x, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("level", [1, 2])
def test_transform_gradients(seed, level, f64):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
    r = Tensor(rng.standard_normal((1, 2 * 4**level, 8 >> level, 8 >> level)))
    err = check_gradients(lambda: sum_all(mul(dwt_multi(x, level), r)), [x], seed=seed)
    assert max(err.values()) <= 1e-4
    y = Tensor(rng.standard_normal((1, 2 * 4**level, 8 >> level, 8 >> level)), requires_grad=True)
    r2 = Tensor(rng.standard_normal((1, 2, 8, 8)))
    err = check_gradients(lambda: sum_all(mul(iwt_multi(y, level), r2)), [y], seed=seed)
    assert max(err.values()) <= 1e-4
