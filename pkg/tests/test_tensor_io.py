import json
import struct

import numpy as np
import pytest

from comq.grid import QuantizedLayer
from comq.tensor_io import (
    ArtifactConsistencyError,
    BadDtypeError,
    BadMagicError,
    BadVersionError,
    ManifestError,
    ManifestWarning,
    TruncatedPayloadError,
    load_manifest,
    load_quantized,
    load_tensor,
    peek_tensor,
    save_quantized,
    save_tensor,
)


def meta_record(bits=4, **overrides):
    meta = {
        "bits": bits,
        "iters": 3,
        "lambda": 1.0,
        "granularity": "per-channel",
        "order": "greedy",
        "solver_version": "0.1.0",
        "error_before": 1.0,
        "error_after": 0.5,
    }
    meta.update(overrides)
    return meta


@pytest.mark.parametrize(
    "array",
    [
        np.array([1.5, -2.25, 0.0], dtype=np.float32),
        np.arange(12, dtype=np.int32).reshape(3, 4) - 6,
        np.array([[-128, 127], [0, -1]], dtype=np.int8),
        np.zeros((2, 0, 3), dtype=np.float32),
        np.float32(3.25).reshape(()),
    ],
)
def test_round_trip_preserves_everything(tmp_path, array):
    path = tmp_path / "t.ct"
    save_tensor(path, array)
    back = load_tensor(path)
    assert back.shape == array.shape
    assert back.dtype == array.dtype
    np.testing.assert_array_equal(back, array)


def test_layout_is_frozen(tmp_path):
    # The byte layout is a cross-language contract; pin it literally.
    path = tmp_path / "t.ct"
    save_tensor(path, np.array([[1.5]], dtype=np.float32))
    blob = path.read_bytes()
    expected = (
        b"COMQTNSR"
        + struct.pack("<I", 1)
        + bytes([0, 2])
        + struct.pack("<QQ", 1, 1)
        + struct.pack("<f", 1.5)
    )
    assert blob == expected


def test_save_is_deterministic(tmp_path):
    arr = np.arange(20, dtype=np.int32).reshape(4, 5)
    a, b = tmp_path / "a.ct", tmp_path / "b.ct"
    save_tensor(a, arr)
    save_tensor(b, arr)
    assert a.read_bytes() == b.read_bytes()


def test_save_rejects_foreign_dtypes(tmp_path):
    with pytest.raises(BadDtypeError):
        save_tensor(tmp_path / "t.ct", np.zeros(3, dtype=np.float64))
    with pytest.raises(BadDtypeError):
        save_tensor(tmp_path / "t.ct", np.zeros(3, dtype=np.int64))


def good_file(tmp_path):
    path = tmp_path / "t.ct"
    save_tensor(path, np.arange(6, dtype=np.float32).reshape(2, 3))
    return path


def test_bad_magic_detected(tmp_path):
    path = good_file(tmp_path)
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError):
        load_tensor(path)


def test_bad_version_detected(tmp_path):
    path = good_file(tmp_path)
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", 7)
    path.write_bytes(bytes(blob))
    with pytest.raises(BadVersionError):
        load_tensor(path)


def test_bad_dtype_code_detected(tmp_path):
    path = good_file(tmp_path)
    blob = bytearray(path.read_bytes())
    blob[12] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(BadDtypeError):
        load_tensor(path)


def test_truncated_payload_detected(tmp_path):
    path = good_file(tmp_path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-1])
    with pytest.raises(TruncatedPayloadError):
        load_tensor(path)


def test_trailing_bytes_detected(tmp_path):
    path = good_file(tmp_path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(TruncatedPayloadError):
        load_tensor(path)


def test_short_header_detected(tmp_path):
    path = tmp_path / "t.ct"
    path.write_bytes(b"COMQ")
    with pytest.raises(TruncatedPayloadError):
        load_tensor(path)
    path.write_bytes(b"COMQTNSR\x01\x00")
    with pytest.raises(TruncatedPayloadError):
        load_tensor(path)


def test_peek_reads_only_the_header(tmp_path):
    path = good_file(tmp_path)
    dtype, shape = peek_tensor(path)
    assert dtype == np.dtype("<f4")
    assert shape == (2, 3)


def sample_layer():
    return QuantizedLayer(
        np.array([[1, -2], [7, 0], [-8, 3]], np.int32),
        np.array([0.125, 0.5], np.float32),
        np.array([-8, -2], np.int32),
    )


def test_artifact_round_trip_identity(tmp_path):
    layer = sample_layer()
    meta = meta_record()
    save_quantized(tmp_path / "fc1", layer, meta)
    back, back_meta = load_quantized(tmp_path / "fc1")
    np.testing.assert_array_equal(back.codes, layer.codes)
    np.testing.assert_array_equal(back.scales, layer.scales)
    np.testing.assert_array_equal(back.zero_points, layer.zero_points)
    assert back_meta == meta
    np.testing.assert_array_equal(back.dequantize(), layer.dequantize())


def test_artifact_narrows_codes_by_bit_width(tmp_path):
    save_quantized(tmp_path / "small", sample_layer(), meta_record(bits=4))
    dtype, _ = peek_tensor(tmp_path / "small" / "codes.ct")
    assert dtype == np.dtype("<i1")
    wide = QuantizedLayer(np.array([[300, -300]], np.int32),
                          np.array([0.1], np.float32))
    save_quantized(tmp_path / "wide", wide, meta_record(bits=16))
    dtype, _ = peek_tensor(tmp_path / "wide" / "codes.ct")
    assert dtype == np.dtype("<i4")
    back, _ = load_quantized(tmp_path / "wide")
    assert back.codes.dtype == np.int32
    np.testing.assert_array_equal(back.codes, wide.codes)


def test_artifact_keeps_int32_for_codes_outside_int8(tmp_path):
    # A zero point far from the origin puts 8-bit-wide windows outside
    # int8 range; such codes stay int32 on disk and still round-trip.
    shifted = QuantizedLayer(np.array([[200]], np.int32),
                             np.array([0.1], np.float32),
                             np.array([150], np.int32))
    save_quantized(tmp_path / "shifted", shifted, meta_record(bits=8))
    dtype, _ = peek_tensor(tmp_path / "shifted" / "codes.ct")
    assert dtype == np.dtype("<i4")
    back, _ = load_quantized(tmp_path / "shifted")
    np.testing.assert_array_equal(back.codes, shifted.codes)


def test_artifact_requires_full_meta(tmp_path):
    meta = meta_record()
    del meta["order"]
    with pytest.raises(ArtifactConsistencyError):
        save_quantized(tmp_path / "fc1", sample_layer(), meta)
    save_quantized(tmp_path / "fc2", sample_layer(), meta_record())
    meta_path = tmp_path / "fc2" / "meta"
    partial = json.loads(meta_path.read_text())
    del partial["bits"]
    meta_path.write_text(json.dumps(partial))
    with pytest.raises(ArtifactConsistencyError):
        load_quantized(tmp_path / "fc2")


def write_pair(tmp_path, name, rows=4, cols=2, calib_rows=6):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    save_tensor(tmp_path / f"{name}.w.ct",
                rng.standard_normal((rows, cols)).astype(np.float32))
    save_tensor(tmp_path / f"{name}.x.ct",
                rng.standard_normal((calib_rows, rows)).astype(np.float32))
    return {"name": name, "weight": f"{name}.w.ct", "calib": f"{name}.x.ct"}


def test_manifest_loads_and_validates(tmp_path):
    entries = [write_pair(tmp_path, "fc1"), write_pair(tmp_path, "fc2", rows=3)]
    doc = {"defaults": {"bits": 3, "order": "cyclic"}, "layers": entries}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    manifest = load_manifest(path)
    assert [spec.name for spec in manifest.layers] == ["fc1", "fc2"]
    assert manifest.defaults["bits"] == 3
    assert manifest.layers[0].weight_path.is_file()


def test_manifest_unknown_keys_warn_not_fail(tmp_path):
    entry = write_pair(tmp_path, "fc1")
    entry["note"] = "extra"
    doc = {"layers": [entry], "defaults": {"bits": 2, "flavor": "mild"}, "owner": "me"}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    with pytest.warns(ManifestWarning) as record:
        manifest = load_manifest(path)
    assert len(manifest.layers) == 1
    mentioned = " ".join(str(w.message) for w in record)
    assert "owner" in mentioned and "flavor" in mentioned and "note" in mentioned


def test_manifest_empty_layer_list_is_valid(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"layers": []}))
    assert load_manifest(path).layers == ()


@pytest.mark.parametrize(
    "doc",
    [
        {"defaults": {}},
        {"layers": {"name": "fc1"}},
        {"layers": [{"name": "fc1", "weight": "w.ct"}]},
        {"layers": [{"name": "../evil", "weight": "w.ct", "calib": "x.ct"}]},
    ],
)
def test_manifest_structural_errors(tmp_path, doc):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ManifestError):
        load_manifest(path, validate=False)


def test_manifest_duplicate_names_rejected(tmp_path):
    entries = [write_pair(tmp_path, "fc1"), dict(write_pair(tmp_path, "fc2"), name="fc1")]
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"layers": entries}))
    with pytest.raises(ManifestError):
        load_manifest(path, validate=False)


def test_manifest_missing_file_rejected(tmp_path):
    entry = write_pair(tmp_path, "fc1")
    (tmp_path / "fc1.x.ct").unlink()
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"layers": [entry]}))
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_manifest_shape_mismatch_rejected_before_solving(tmp_path):
    entry = write_pair(tmp_path, "fc1")
    save_tensor(tmp_path / "fc1.x.ct",
                np.zeros((6, 5), dtype=np.float32))  # 5 columns vs 4 rows
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"layers": [entry]}))
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_manifest_rejects_non_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("not json {")
    with pytest.raises(ManifestError):
        load_manifest(path)
