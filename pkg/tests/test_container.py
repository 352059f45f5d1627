"""Binary container format: bit-exact round-trips and hostile-input errors."""

import numpy as np
import pytest

from eyedx import DataError
from eyedx.container import (
    MAGIC,
    load_model,
    load_quantized,
    read_container,
    save_model,
    save_quantized,
    write_container,
)
from eyedx.model import Model, ModelConfig, init_params
from eyedx.quant import QuantizedModel, codes_of, quantize, quantize_model

RNG = np.random.default_rng(5)

CFG = ModelConfig(
    d_model=16, n_layers=1, n_heads=2, n_kv_heads=1, d_ff=24, vocab_size=11, max_seq_len=16
)


def test_round_trip_is_bit_exact(tmp_path):
    tensors = {
        "w32": RNG.standard_normal((3, 5)).astype(np.float32),
        "w64": RNG.standard_normal(7),
        "gain": np.ones(4, dtype=np.float32),
    }
    header = {"kind": "test", "note": "round trip", "n": 3}
    path = tmp_path / "t.bin"
    write_container(path, header, tensors)
    h2, t2 = read_container(path)
    assert h2 == header
    assert list(t2) == list(tensors)  # order preserved
    for name in tensors:
        assert t2[name].dtype == tensors[name].dtype
        assert np.array_equal(t2[name], tensors[name])


def test_round_trip_quant_tensor(tmp_path):
    q = quantize(RNG.standard_normal(200).astype(np.float32), block_size=32)
    path = tmp_path / "q.bin"
    write_container(path, {"kind": "test"}, {"q": q})
    _, t2 = read_container(path)
    q2 = t2["q"]
    assert q2.block_size == 32
    assert q2.shape == (200,)
    assert np.array_equal(q2.packed, q.packed)
    assert np.array_equal(q2.scales, q.scales)
    assert np.array_equal(codes_of(q2), codes_of(q))


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(DataError, match="magic"):
        read_container(path)


def test_truncated_file_rejected(tmp_path):
    good = tmp_path / "good.bin"
    write_container(good, {"k": 1}, {"w": np.ones((4, 4), dtype=np.float32)})
    data = good.read_bytes()
    bad = tmp_path / "trunc.bin"
    bad.write_bytes(data[: len(data) - 9])
    with pytest.raises(DataError, match="truncated"):
        read_container(bad)


def test_unknown_version_rejected(tmp_path):
    path = tmp_path / "v.bin"
    path.write_bytes(MAGIC + (99).to_bytes(4, "little") + b"\x00" * 8)
    with pytest.raises(DataError, match="version"):
        read_container(path)


def test_missing_file_rejected():
    with pytest.raises(DataError, match="not found"):
        read_container("/nonexistent/x.bin")


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(DataError, match="dtype"):
        write_container(tmp_path / "i.bin", {}, {"w": np.ones(3, dtype=np.int32)})


def test_model_checkpoint_round_trip(tmp_path):
    model = Model(CFG, init_params(CFG, seed=3))
    path = tmp_path / "model.bin"
    save_model(model, path)
    back = load_model(path)
    assert back.config == CFG
    for name, w in model.params.items():
        assert np.array_equal(back.params[name], w)
    tokens = RNG.integers(0, CFG.vocab_size, 9)
    assert np.array_equal(model.forward(tokens), back.forward(tokens))


def test_quantized_checkpoint_round_trip(tmp_path):
    params = init_params(CFG, seed=4)
    qmodel = QuantizedModel(CFG, quantize_model(params, CFG))
    path = tmp_path / "model.q4"
    save_quantized(qmodel, path)
    back = load_quantized(path)
    tokens = RNG.integers(0, CFG.vocab_size, 9)
    assert np.array_equal(qmodel.forward(tokens), back.forward(tokens))


def test_kind_mixups_rejected(tmp_path):
    model = Model(CFG, init_params(CFG))
    path = tmp_path / "model.bin"
    save_model(model, path)
    with pytest.raises(DataError, match="quant-model"):
        load_quantized(path)
