"""Checkpoint container: byte-identical round-trips, RNG state transport,
and mismatch detection."""

import numpy as np
import pytest

from detrend import checkpoint as ckpt
from detrend.checkpoint import CheckpointError
from detrend.network import NetworkConfig, build
from detrend.tensor import Prng
from detrend.trainer import OptState


def make_model(norm="bn_ad", seed=0):
    cfg = NetworkConfig.desk(heads=(2, 3), in_shape=(1, 16, 16), channels=(3, 4, 5),
                             norm=norm)
    return build(cfg, Prng(seed).spawn(0))


def test_save_load_restores_params(tmp_path):
    model = make_model()
    opt = OptState(model.named_params())
    rng = Prng(9)
    for v in opt.velocity.values():
        v += 0.25
    path = tmp_path / "a.ckpt"
    ckpt.save(path, model, opt, rng, epoch=5)

    other = make_model(seed=1)
    opt2 = OptState(other.named_params())
    rng2 = Prng(0)
    epoch = ckpt.load(path, other, opt2, rng2)
    assert epoch == 5
    for name, p in model.named_params().items():
        np.testing.assert_array_equal(p.data, other.named_params()[name].data)
    for name, v in opt.velocity.items():
        np.testing.assert_array_equal(v, opt2.velocity[name])
    # restored rng continues the saved stream
    np.testing.assert_array_equal(rng.gaussian((8,), 1.0), rng2.gaussian((8,), 1.0))


def test_save_load_save_byte_identical(tmp_path):
    model = make_model()
    opt = OptState(model.named_params())
    rng = Prng(2)
    a = tmp_path / "a.ckpt"
    b = tmp_path / "b.ckpt"
    ckpt.save(a, model, opt, rng, epoch=3)
    other = make_model(seed=7)
    opt2 = OptState(other.named_params())
    rng2 = Prng(5)
    ckpt.load(a, other, opt2, rng2)
    ckpt.save(b, other, opt2, rng2, epoch=3)
    assert a.read_bytes() == b.read_bytes()


def test_running_stats_travel(tmp_path):
    model = make_model("bn_ad")
    stats = model.running_stats()
    assert stats  # bn variant exposes running statistics
    key = sorted(stats)[0]
    stats[key].update(0, np.full(stats[key].features, 1.5), np.full(stats[key].features, 2.5))
    path = tmp_path / "s.ckpt"
    ckpt.save(path, model)
    other = make_model("bn_ad", seed=3)
    ckpt.load(path, other)
    got = other.running_stats()[key]
    np.testing.assert_array_equal(got.mean[0], np.full(got.features, 1.5))
    np.testing.assert_array_equal(got.var[0], np.full(got.features, 2.5))
    assert got.count[0] == 1


def test_read_header_layout(tmp_path):
    model = make_model()
    path = tmp_path / "h.ckpt"
    ckpt.save(path, model, epoch=1, meta={"note": "x"})
    header, arrays = ckpt.read(path)
    assert header["format_version"] == 1
    assert header["meta"] == {"note": "x"}
    names = [e["name"] for e in header["tensors"]]
    assert names == sorted(names)
    assert all(n.startswith(("param/", "stats/")) for n in names)
    assert "param/conv1.W" in arrays


def test_not_a_checkpoint_raises(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"hello world")
    with pytest.raises(CheckpointError):
        ckpt.read(path)


def test_shape_mismatch_raises(tmp_path):
    model = make_model()
    path = tmp_path / "m.ckpt"
    ckpt.save(path, model)
    cfg = NetworkConfig.desk(heads=(2, 3), in_shape=(1, 16, 16), channels=(3, 4, 6),
                             norm="bn_ad")
    wrong = build(cfg, Prng(0).spawn(0))
    with pytest.raises(CheckpointError):
        ckpt.load(path, wrong)


def test_missing_param_raises(tmp_path):
    model = make_model(norm="none")
    path = tmp_path / "n.ckpt"
    ckpt.save(path, model)
    richer = make_model(norm="bn_ad")
    with pytest.raises(CheckpointError):
        ckpt.load(path, richer)


def test_rng_roundtrip_through_json():
    rng = Prng(123)
    rng.gaussian((100,), 1.0)
    encoded = ckpt._encode_rng(rng.state())
    decoded = ckpt._decode_rng(encoded)
    fresh = Prng(0)
    fresh.set_state(decoded)
    np.testing.assert_array_equal(rng.gaussian((10,), 1.0), fresh.gaussian((10,), 1.0))
