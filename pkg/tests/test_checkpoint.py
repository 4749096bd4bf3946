import numpy as np
import pytest

from myow.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"w": rng.normal(size=(3, 4)), "v": rng.normal(size=5).astype(np.float32),
              "perm": rng.permutation(7), "scalar": np.array(np.pi), "empty": np.zeros((0, 3))}
    meta = {"step": 12, "rng": {"aug": "abc"}}
    save_checkpoint(tmp_path / "c.ckpt", "seed = 1\n", arrays, meta)
    text, out, m = load_checkpoint(tmp_path / "c.ckpt")
    assert text == "seed = 1\n" and m == meta and set(out) == set(arrays)
    for k, v in arrays.items():
        assert out[k].dtype == (np.int64 if v.dtype.kind == "i" else v.dtype)
        assert out[k].shape == v.shape and np.array_equal(out[k], v)
        assert out[k].tobytes() == np.asarray(v, dtype=out[k].dtype).tobytes()


def test_saving_is_deterministic(tmp_path):
    arrays = {"b": np.arange(3.0), "a": np.ones(2)}
    save_checkpoint(tmp_path / "1", "x", arrays, {"k": 1})
    save_checkpoint(tmp_path / "2", "x", dict(reversed(list(arrays.items()))), {"k": 1})
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_bad_files_rejected(tmp_path):
    (tmp_path / "junk").write_bytes(b"hello world")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "junk")
    save_checkpoint(tmp_path / "ok", "x", {"a": np.ones(100)}, {})
    blob = (tmp_path / "ok").read_bytes()
    (tmp_path / "cut").write_bytes(blob[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "cut")


def test_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError, match="dtype"):
        save_checkpoint(tmp_path / "c", "x", {"s": np.array(["a"])}, {})
