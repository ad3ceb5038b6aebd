import numpy as np
import pytest

from ewt import tensor as T
from ewt.errors import (
    ChecksumError,
    ConfigError,
    DimensionError,
    NameSetMismatchError,
    ShapeMismatchError,
)
from ewt.gradcheck import check_gradients
from ewt.model import (
    ModelConfig,
    activation_footprint,
    build,
    check_input_shape,
    flops_estimate,
    forward_schedule,
    l1_loss,
    peak_live,
)
from ewt.optim import Adam
from ewt.serialize import load, read_config, save
from ewt.tensor import Tensor, backward, no_grad

TINY = ModelConfig(in_channels=1, embed_dim=8, heads=2, window_size=2, num_dfeb=1, blocks_per_dfeb=2)


def test_tiny_parameter_count():
    # head 296 + DFEB 3564 + MFAM tail 1168 + tail 292
    assert build(TINY).param_count() == 5320


def test_default_parameter_count():
    assert build(ModelConfig()).param_count() == 11_591_112


def test_config_validation_lists_every_problem():
    with pytest.raises(ConfigError) as info:
        ModelConfig(embed_dim=10, heads=4, window_size=0, res_scale=2.0).validate()
    msg = str(info.value)
    assert "heads" in msg and "window" in msg and "res_scale" in msg


def test_input_shape_names_multiple():
    with pytest.raises(DimensionError, match="16"):
        check_input_shape(ModelConfig(), (1, 3, 24, 32))
    with pytest.raises(DimensionError):
        check_input_shape(ModelConfig(), (1, 1, 32, 32))


def test_config_dict_roundtrip():
    cfg = ModelConfig(embed_dim=60, wavelet_level=2)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_build_is_deterministic():
    a, b = build(TINY, seed=3), build(TINY, seed=3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
    c = build(TINY, seed=4)
    assert not np.array_equal(a.head.w.data, c.head.w.data)


def test_forward_is_deterministic():
    m = build(TINY, seed=1)
    x = Tensor(np.random.default_rng(0).random((1, 1, 16, 16)))
    with no_grad():
        np.testing.assert_array_equal(m(x).data, m(x).data)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_zero_weights_give_identity(level):
    m = build(TINY.replace(wavelet_level=level), seed=0).zero_()
    x = Tensor(np.random.default_rng(level).random((2, 1, 16, 16)))
    assert np.max(np.abs(m(x).data - x.data)) <= 1e-5


def test_l1_loss_value():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[0.0, 2.0], [5.0, 4.0]])
    assert l1_loss(a, b).item() == pytest.approx(0.75)


# -- cost model ---------------------------------------------------------------


class _MacCounter:
    """Counts multiply-accumulates of every conv/linear/matmul call during a forward."""

    def __init__(self, monkeypatch):
        self.total = 0
        conv2d, linear, matmul = T.conv2d, T.linear, T.matmul

        def counted_conv(x, w, b=None, stride=1, pad=0):
            out = conv2d(x, w, b, stride, pad)
            self.total += out.size * w.shape[1] * w.shape[2] * w.shape[3]
            return out

        def counted_linear(x, w, b=None):
            self.total += int(np.prod(x.shape[:-1])) * w.shape[0] * w.shape[1]
            return linear(x, w, b)

        def counted_matmul(a, b):
            out = matmul(a, b)
            self.total += out.size * a.shape[-1]
            return out

        monkeypatch.setattr(T, "conv2d", counted_conv)
        monkeypatch.setattr(T, "linear", counted_linear)
        monkeypatch.setattr(T, "matmul", counted_matmul)


@pytest.mark.parametrize("level,size", [(1, 16), (2, 16), (1, 32), (0, 8)])
def test_flops_estimate_matches_counted_macs(level, size, monkeypatch):
    cfg = TINY.replace(wavelet_level=level, in_channels=3, num_dfeb=2)
    m = build(cfg)
    counter = _MacCounter(monkeypatch)
    with no_grad():
        m(Tensor(np.zeros((1, 3, size, size))))
    assert counter.total == flops_estimate(cfg, size, size)


def test_flops_scale_with_area():
    cfg = ModelConfig()
    assert flops_estimate(cfg, 128, 128) == 4 * flops_estimate(cfg, 64, 64)


def test_default_flops_values():
    cfg = ModelConfig()
    assert flops_estimate(cfg, 64, 64) == 12_350_914_560
    ratios = [flops_estimate(cfg.replace(wavelet_level=k), 64, 64) for k in (1, 2, 3)]
    assert 3.6 <= ratios[0] / ratios[1] <= 4.2
    assert 3.4 <= ratios[1] / ratios[2] <= 4.2


def test_tiny_footprint_by_hand():
    # E = 4*32*32 image, X = 8*32*32 feature map, S = 2*32*32*4 scores.
    # At the softmax: head output, block input, qkv (3X), scores, attn.
    E, X, S = 4096, 8192, 8192
    assert activation_footprint(TINY, 64, 64) == 6 * X + 2 * S + E == 69632


def test_peak_live_small_graph():
    ops = [("a", 10, ()), ("b", 5, ("a",)), ("c", 1, ("b",)), ("d", 7, ("a", "c"))]
    # at d: a (10) + c (1) + d (7) = 18; at b: a + b = 15
    assert peak_live(ops) == 18


def test_schedule_ends_with_image():
    ops = forward_schedule(TINY, 64, 64)
    assert ops[0] == ("input", 4096, ())
    assert ops[-1][1] == 4096


def test_footprint_decreases_with_level():
    cfg = ModelConfig()
    f = [activation_footprint(cfg.replace(wavelet_level=k), 64, 64) for k in (1, 2, 3)]
    assert f[0] > f[1] > f[2]


# -- end-to-end gradients and training step ----------------------------------------

E2E = ModelConfig(in_channels=1, embed_dim=4, heads=2, window_size=2, num_dfeb=1, blocks_per_dfeb=2, res_scale=0.5)


@pytest.mark.parametrize("seed", range(5))
def test_end_to_end_gradients(seed, f64):
    m = build(E2E, seed)
    rng = np.random.default_rng(seed)
    noisy = Tensor(rng.random((1, 1, 8, 8)))
    clean = Tensor(rng.random((1, 1, 8, 8)))
    tensors = dict(m.named_parameters())
    err = check_gradients(lambda: l1_loss(m(noisy), clean), tensors, eps=1e-6, max_entries=4, seed=seed)
    assert max(err.values()) <= 1e-3, sorted(err.items(), key=lambda kv: -kv[1])[:3]


@pytest.mark.parametrize("seed", range(5))
def test_one_adam_step_reduces_loss(seed):
    m = build(TINY, seed)
    rng = np.random.default_rng(seed)
    clean = rng.random((2, 1, 16, 16))
    noisy = Tensor(clean + 0.1 * rng.standard_normal(clean.shape))
    target = Tensor(clean)
    opt = Adam(m.parameters(), lr=1e-4)
    loss = l1_loss(m(noisy), target)
    before = loss.item()
    backward(loss)
    opt.step()
    with no_grad():
        assert l1_loss(m(noisy), target).item() < before


# -- serialization --------------------------------------------------------------


def test_save_load_bit_identical(tmp_path):
    m = build(TINY, seed=7)
    path = tmp_path / "w.ewt"
    save(m, path)
    back = load(TINY, path)
    x = Tensor(np.random.default_rng(0).random((1, 1, 16, 16)))
    with no_grad():
        np.testing.assert_array_equal(m(x).data, back(x).data)
    assert read_config(path) == TINY
    assert load(None, path).param_count() == m.param_count()


def test_float64_weights_roundtrip(tmp_path, f64):
    m = build(TINY, seed=2)
    save(m, tmp_path / "w.ewt")
    back = load(None, tmp_path / "w.ewt")
    assert back.head.w.dtype == np.float64
    np.testing.assert_array_equal(back.head.w.data, m.head.w.data)


def test_ablation_branches_roundtrip(tmp_path):
    m = build(TINY, seed=1, branches=("conv", "conv"))
    save(m, tmp_path / "w.ewt")
    assert load(None, tmp_path / "w.ewt").branches == ("conv", "conv")


def test_corruption_detected(tmp_path):
    path = tmp_path / "w.ewt"
    save(build(TINY), path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load(TINY, path)


def test_mismatched_config_rejected(tmp_path):
    path = tmp_path / "w.ewt"
    save(build(TINY), path)
    with pytest.raises(ShapeMismatchError):
        load(TINY.replace(embed_dim=16), path)
    with pytest.raises(NameSetMismatchError):
        load(TINY.replace(blocks_per_dfeb=4), path)
