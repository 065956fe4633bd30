import struct

import numpy as np
import pytest

from ganvert import weightfile as wf
from ganvert.generator import (GeneratorConfig, RankDeficientError, init_weights, load_weights,
                               save_weights, bundle_from_tensors)


def test_header_layout():
    buf = wf.encode({"a": np.array([1.5, -2.0])})
    assert buf[:4] == b"GANW"
    assert struct.unpack("<II", buf[4:12]) == (1, 1)
    (name_len,) = struct.unpack("<H", buf[12:14])
    assert buf[14:14 + name_len] == b"a"
    dtype, ndim = buf[14 + name_len], buf[15 + name_len]
    assert (dtype, ndim) == (0, 1)
    assert struct.unpack("<I", buf[16 + name_len:20 + name_len]) == (2,)
    assert struct.unpack("<2d", buf[20 + name_len:]) == (1.5, -2.0)


def test_round_trip_bit_exact(rng):
    tensors = {"x": rng.normal(size=(3, 4)), "scalar": np.array(np.pi),
               "tiny": np.array([5e-324, -0.0, 1e308]), "名前": np.ones((1, 1, 2))}
    out = wf.decode(wf.encode(tensors))
    assert set(out) == set(tensors)
    for k in tensors:
        assert out[k].shape == tensors[k].shape
        assert out[k].tobytes() == tensors[k].tobytes()


def test_bad_magic():
    buf = bytearray(wf.encode({"a": np.ones(2)}))
    buf[:4] = b"XXXX"
    with pytest.raises(wf.BadMagicError):
        wf.decode(bytes(buf))


def test_version_mismatch():
    buf = bytearray(wf.encode({"a": np.ones(2)}))
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(wf.VersionMismatchError):
        wf.decode(bytes(buf))


@pytest.mark.parametrize("cut", [3, 10, 13, 20, -1, -8])
def test_truncated(cut):
    buf = wf.encode({"a": np.ones(2), "b": np.zeros(3)})
    with pytest.raises(wf.TruncatedFileError):
        wf.decode(buf[:cut])


def test_trailing_bytes_rejected():
    with pytest.raises(wf.WeightFileError):
        wf.decode(wf.encode({"a": np.ones(2)}) + b"\0")


def test_error_kinds_are_distinct():
    kinds = {wf.BadMagicError, wf.VersionMismatchError, wf.TruncatedFileError, RankDeficientError}
    assert len(kinds) == 4
    assert not issubclass(wf.BadMagicError, wf.TruncatedFileError)


def test_bundle_save_load_save_identical(tmp_path, bundle):
    p1, p2 = tmp_path / "a.gw", tmp_path / "b.gw"
    save_weights(bundle, p1)
    loaded = load_weights(p1)
    save_weights(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.same_as(bundle)


def test_load_rejects_zeroed_w1(tmp_path, bundle):
    tensors = wf.decode((lambda p: (save_weights(bundle, p), p.read_bytes())[1])(tmp_path / "w.gw"))
    tensors["W1"] = np.zeros_like(tensors["W1"])
    bad = tmp_path / "bad.gw"
    wf.save(tensors, bad)
    with pytest.raises(RankDeficientError):
        load_weights(bad)


def test_load_rejects_missing_config(tmp_path, bundle):
    wf.save(dict(bundle.weights), tmp_path / "w.gw")
    with pytest.raises(wf.WeightFileError):
        load_weights(tmp_path / "w.gw")


def test_same_seed_same_bytes(tmp_path):
    cfg = GeneratorConfig()
    save_weights(init_weights(cfg, 11), tmp_path / "a.gw")
    save_weights(init_weights(cfg, 11), tmp_path / "b.gw")
    assert (tmp_path / "a.gw").read_bytes() == (tmp_path / "b.gw").read_bytes()


def test_config_tensor_round_trip():
    cfg = GeneratorConfig(d_z=5, dense_out=(8, 2, 2), block_channels=(6, 4, 4), attention_stage=2,
                          attention_subsample=1, out_resolution=16)
    assert GeneratorConfig.decode(cfg.encode()) == cfg
    b = init_weights(cfg, 1)
    assert bundle_from_tensors({**b.weights, "config": cfg.encode()}).same_as(b)
