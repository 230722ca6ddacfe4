import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wnet.data import (
    FormatError,
    LabelRangeError,
    Sample,
    ValidationError,
    assign_splits,
    load_dataset,
    read_grey_pgm,
    read_label_pgm,
    read_rf_binary,
    save_dataset,
    write_grey_pgm,
    write_label_pgm,
    write_rf_binary,
)


def test_rf_roundtrip_small(tmp_path):
    frame = np.array([[1.5, -2.0], [0.0, 3.25]], dtype=np.float32)
    write_rf_binary(frame, tmp_path / "a.rfb")
    np.testing.assert_array_equal(read_rf_binary(tmp_path / "a.rfb"), frame)


def test_rf_full_size_dims(tmp_path):
    frame = np.random.default_rng(0).standard_normal((784, 192)).astype(np.float32)
    write_rf_binary(frame, tmp_path / "a.rfb")
    out = read_rf_binary(tmp_path / "a.rfb")
    assert out.shape == (784, 192)
    assert (tmp_path / "a.rfb").stat().st_size == 12 + 784 * 192 * 4


def test_rf_extreme_value_and_zeros(tmp_path):
    write_rf_binary([[-30000.0]], tmp_path / "a.rfb")
    assert read_rf_binary(tmp_path / "a.rfb").tolist() == [[-30000.0]]
    write_rf_binary(np.zeros((4, 3)), tmp_path / "z.rfb")
    assert not read_rf_binary(tmp_path / "z.rfb").any()


def test_rf_writes_are_byte_identical(tmp_path):
    frame = np.arange(12, dtype=np.float32).reshape(3, 4) - 5.5
    write_rf_binary(frame, tmp_path / "a.rfb")
    write_rf_binary(frame, tmp_path / "b.rfb")
    assert (tmp_path / "a.rfb").read_bytes() == (tmp_path / "b.rfb").read_bytes()


def test_rf_header_layout(tmp_path):
    write_rf_binary(np.ones((2, 3)), tmp_path / "a.rfb")
    raw = (tmp_path / "a.rfb").read_bytes()
    assert raw[:4] == b"RFB1"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:12], "little") == 3


def test_rf_truncated(tmp_path):
    write_rf_binary(np.ones((4, 4)), tmp_path / "a.rfb")
    raw = (tmp_path / "a.rfb").read_bytes()
    (tmp_path / "t.rfb").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="truncated"):
        read_rf_binary(tmp_path / "t.rfb")


def test_rf_bad_magic(tmp_path):
    (tmp_path / "m.rfb").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(FormatError, match="offset 0"):
        read_rf_binary(tmp_path / "m.rfb")


def test_rf_non_finite_names_offset(tmp_path):
    write_rf_binary(np.zeros((2, 2)), tmp_path / "a.rfb")
    raw = bytearray((tmp_path / "a.rfb").read_bytes())
    raw[12 + 8 : 12 + 12] = np.array([np.nan], dtype="<f4").tobytes()
    (tmp_path / "n.rfb").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="offset 20"):
        read_rf_binary(tmp_path / "n.rfb")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-3e4, 3e4, width=32)))
def test_rf_roundtrip_bit_exact(tmp_path_factory, frame):
    path = tmp_path_factory.mktemp("rf") / "f.rfb"
    write_rf_binary(frame, path)
    assert read_rf_binary(path).tobytes() == frame.tobytes()


def test_grey_pixel_mapping(tmp_path):
    raw = np.array([[255, 0, 128]], dtype=np.uint8)
    write_grey_pgm(raw / 255.0, tmp_path / "g.pgm")
    g = read_grey_pgm(tmp_path / "g.pgm")
    assert g[0, 0] == 1.0
    assert g[0, 1] == 0.0
    assert g[0, 2] == np.float32(128 / 255)


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8))))
def test_grey_roundtrip_on_grid(tmp_path_factory, raw):
    path = tmp_path_factory.mktemp("g") / "g.pgm"
    write_grey_pgm(raw.astype(np.float32) / 255, path)
    again = tmp_path_factory.mktemp("g") / "h.pgm"
    write_grey_pgm(read_grey_pgm(path), again)
    assert path.read_bytes() == again.read_bytes()
    np.testing.assert_array_equal(np.rint(read_grey_pgm(path) * 255).astype(np.uint8), raw)


def test_grey_rejects_bad_maxval(tmp_path):
    (tmp_path / "g.pgm").write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(FormatError, match="maxval"):
        read_grey_pgm(tmp_path / "g.pgm")
    (tmp_path / "p.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(FormatError, match="magic"):
        read_grey_pgm(tmp_path / "p.pgm")


def test_label_roundtrip(tmp_path):
    ones = np.ones((5, 4), dtype=np.uint8)
    write_label_pgm(ones, tmp_path / "l.pgm")
    assert (read_label_pgm(tmp_path / "l.pgm") == 1).all()
    padded = np.vstack([ones, np.zeros((2, 4), np.uint8)])
    write_label_pgm(padded, tmp_path / "p.pgm")
    assert (read_label_pgm(tmp_path / "p.pgm") == 0).any()


def test_label_out_of_range(tmp_path):
    (tmp_path / "l.pgm").write_bytes(b"P5\n2 1\n255\n\x01\x07")
    with pytest.raises(LabelRangeError):
        read_label_pgm(tmp_path / "l.pgm")
    with pytest.raises(LabelRangeError):
        write_label_pgm(np.array([[7]]), tmp_path / "x.pgm")


def _sample(sid, rows=8, cols=4, rng=None):
    rng = rng or np.random.default_rng(0)
    return Sample(
        sid, "A", rng.standard_normal((rows, cols)).astype(np.float32),
        (rng.integers(0, 256, (rows, cols)) / 255).astype(np.float32),
        rng.integers(1, 6, (rows, cols)).astype(np.uint8), rows,
    )


def test_sample_shape_mismatch():
    with pytest.raises(ValidationError, match="bad"):
        Sample("bad", "A", np.zeros((10, 4)), np.zeros((8, 4)), np.ones((8, 4)))


def test_load_dataset_splits(tmp_path):
    samples = [_sample(f"s{i}") for i in range(3)]
    save_dataset(samples, {"s0": "train", "s1": "val", "s2": "test"}, tmp_path)
    loaded, splits = load_dataset(tmp_path / "manifest.json")
    assert [s.id for s in loaded] == ["s0", "s1", "s2"]
    assert {k: len(v) for k, v in splits.items()} == {"train": 1, "val": 1, "test": 1}
    for a, b in zip(samples, loaded):
        np.testing.assert_array_equal(a.rf, b.rf)
        np.testing.assert_array_equal(a.label, b.label)
        np.testing.assert_array_equal(a.grey, b.grey)


def test_load_dataset_dimension_mismatch_names_sample(tmp_path):
    save_dataset([_sample("ok"), _sample("odd")], {"ok": "train", "odd": "test"}, tmp_path)
    write_rf_binary(np.zeros((10, 4)), tmp_path / "rf" / "odd.rfb")
    with pytest.raises(ValidationError, match="odd"):
        load_dataset(tmp_path)


def test_load_empty_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"samples": []}))
    samples, splits = load_dataset(tmp_path / "manifest.json")
    assert samples == [] and all(v == [] for v in splits.values())


def test_manifest_rejects_duplicate_ids(tmp_path):
    save_dataset([_sample("a")], {"a": "train"}, tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["samples"].append(dict(doc["samples"][0], split="test"))
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="twice"):
        load_dataset(tmp_path)


def test_assign_splits_counts():
    splits = assign_splits([f"s{i}" for i in range(10)], (0.6, 0.2, 0.2))
    assert list(splits.values()).count("train") == 6
    assert list(splits.values()).count("val") == 2
    assert list(splits.values()).count("test") == 2
