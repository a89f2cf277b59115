import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoretex.weights_io import MAGIC, WeightsFileError, load_weights, save_weights


def test_round_trip(tmp_path, rng):
    arrays = {
        "mlp.0.weight": rng.normal(size=(8, 4)).astype(np.float32),
        "mlp.0.bias": rng.normal(size=(8,)).astype(np.float32),
        "tables": rng.normal(size=(2, 16, 2)).astype(np.float32),
    }
    path = tmp_path / "ckpt.pgsdwt"
    save_weights(path, "texture_field", arrays, meta={"step": 100})
    kind, loaded, meta = load_weights(path)
    assert kind == "texture_field"
    assert meta == {"step": 100}
    assert set(loaded) == set(arrays)
    for name in arrays:
        np.testing.assert_array_equal(loaded[name], arrays[name])


def test_magic_prefix(tmp_path):
    path = tmp_path / "w.bin"
    save_weights(path, "k", {"a": np.zeros(3, dtype=np.float32)}, meta={})
    assert path.read_bytes()[:8] == MAGIC == b"PGSDWT01"


def test_corruption_detected(tmp_path):
    path = tmp_path / "w.bin"
    save_weights(path, "k", {"a": np.arange(6, dtype=np.float32)}, meta={})
    blob = bytearray(path.read_bytes())
    blob[-6] ^= 0xFF  # flip a payload bit
    path.write_bytes(bytes(blob))
    with pytest.raises(WeightsFileError):
        load_weights(path)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "w.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(WeightsFileError):
        load_weights(path)


def test_serialization_is_deterministic(tmp_path):
    arrays = {"b": np.ones((2, 2), dtype=np.float32),
              "a": np.full((3,), 2.0, dtype=np.float32)}
    p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
    save_weights(p1, "kind", arrays, meta={"x": 1, "y": "z"})
    save_weights(p2, "kind", dict(reversed(arrays.items())), meta={"y": "z", "x": 1})
    assert p1.read_bytes() == p2.read_bytes()


@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)),
                min_size=1, max_size=4))
@settings(max_examples=20, deadline=None)
def test_round_trip_shapes(tmp_path_factory, shapes):
    tmp = tmp_path_factory.mktemp("wio")
    arrays = {f"arr{i}": np.arange(r * c, dtype=np.float32).reshape(r, c)
              for i, (r, c) in enumerate(shapes)}
    path = tmp / "w.bin"
    save_weights(path, "k", arrays, meta={})
    _, loaded, _ = load_weights(path)
    for name, arr in arrays.items():
        np.testing.assert_array_equal(loaded[name], arr)
        assert loaded[name].shape == arr.shape
