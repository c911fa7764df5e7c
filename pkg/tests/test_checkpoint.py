import json

import numpy as np
import pytest

from promptrestore import checkpoint as ckpt


@pytest.fixture
def tensors():
    rng = np.random.default_rng(0)
    return {
        "layer.weight": rng.normal(0, 1, (4, 3)).astype(np.float32),
        "layer.bias": rng.normal(0, 1, (4,)).astype(np.float32),
        "scalar": np.float32(3.5).reshape(()),
    }


def test_roundtrip_is_bitwise(tmp_path, tensors):
    path = tmp_path / "a.ckpt"
    ckpt.save_checkpoint(path, tensors, kind="test", config={"x": 1},
                         step=7, rng_state={"numpy": {"s": 1}})
    manifest, loaded = ckpt.load_checkpoint(path)
    assert manifest["step"] == 7
    assert manifest["config"] == {"x": 1}
    assert manifest["kind"] == "test"
    for name, arr in tensors.items():
        assert loaded[name].dtype == np.float32
        assert loaded[name].tobytes() == np.ascontiguousarray(arr).tobytes()
        assert loaded[name].shape == np.ascontiguousarray(arr).shape


def test_manifest_is_first_line_json(tmp_path, tensors):
    path = tmp_path / "a.ckpt"
    ckpt.save_checkpoint(path, tensors, kind="test", config={})
    with open(path, "rb") as f:
        manifest = json.loads(f.readline())
    assert manifest["format"] == ckpt.FORMAT
    assert {t["name"] for t in manifest["tensors"]} == set(tensors)
    offsets = [t["offset"] for t in manifest["tensors"]]
    assert offsets == sorted(offsets)


def test_truncated_blob_detected(tmp_path, tensors):
    path = tmp_path / "a.ckpt"
    ckpt.save_checkpoint(path, tensors, kind="test", config={})
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(ckpt.TruncatedBlobError):
        ckpt.load_checkpoint(path)


def test_version_mismatch_detected(tmp_path, tensors):
    path = tmp_path / "a.ckpt"
    ckpt.save_checkpoint(path, tensors, kind="test", config={})
    with open(path, "rb") as f:
        manifest = json.loads(f.readline())
        blob = f.read()
    manifest["version"] = 99
    path.write_bytes(json.dumps(manifest).encode() + b"\n" + blob)
    with pytest.raises(ckpt.CheckpointVersionError):
        ckpt.load_checkpoint(path)


def test_foreign_file_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"\x89PNG not a checkpoint\n123")
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_checkpoint(path)


def test_tensor_name_mismatch(tensors):
    with pytest.raises(ckpt.UnknownTensorError):
        ckpt.match_tensors(tensors, ["layer.weight", "layer.bias"])  # extra "scalar"
    with pytest.raises(ckpt.UnknownTensorError):
        ckpt.match_tensors(tensors, list(tensors) + ["missing.weight"])
    ckpt.match_tensors(tensors, list(tensors))  # exact match passes
