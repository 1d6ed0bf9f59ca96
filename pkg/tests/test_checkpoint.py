import numpy as np
import pytest

from focusmix.checkpoint import (
    FORMAT_VERSION,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        arrays = {"a.w": np.arange(6, dtype=np.float32).reshape(2, 3),
                  "b": np.array([1.5], dtype=np.float32)}
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, arrays, meta={"model": "test", "step": 3})
        back, meta = load_checkpoint(path)
        assert meta == {"model": "test", "step": 3}
        assert set(back) == set(arrays)
        for k in arrays:
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_float64_saved_as_float32(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"w": np.array([1.0 / 3.0], dtype=np.float64)})
        back, _ = load_checkpoint(path)
        assert back["w"].dtype == np.float32

    def test_version_field(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"w": np.zeros(1, dtype=np.float32)})
        assert FORMAT_VERSION.encode() in path.read_bytes()[:200]

    def test_rejects_wrong_version(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b'{"version": "other", "params": []}\n')
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_truncated_blob(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"w": np.zeros(8, dtype=np.float32)})
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_no_temp_left_behind(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"w": np.zeros(2, dtype=np.float32)})
        leftovers = [p for p in tmp_path.iterdir() if p.name != "m.ckpt"]
        assert leftovers == []
