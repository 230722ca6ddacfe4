"""Sample types, dataset manifest and raster/RF file I/O.

File formats
------------
RF binary (``.rfb``)
    bytes 0-3 magic ``RFB1``, bytes 4-7 rows (uint32 LE), bytes 8-11 cols
    (uint32 LE), then rows*cols float32 LE values in row-major order.
Grey / label rasters
    binary PGM (``P5``) with maxval 255. Grey bytes map to ``v / 255``;
    label bytes are class ids in ``{0..5}``.
Manifest (``manifest.json``)
    ``{"format": "wnet-dataset", "version": 1, "samples": [...]}`` where each
    entry has ``id``, ``patient``, ``rf``, ``grey``, ``label`` (paths relative
    to the manifest), ``native_rows`` and ``split`` (train/val/test).
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

RF_MAGIC = b"RFB1"
RF_HEADER = struct.Struct("<4sII")

N_CLASSES = 5
CLASS_NAMES = ("skin", "fat", "fat fascia", "muscle", "muscle fascia")
# label id -> name; 0 is the padded region and never a tissue class
LABELS = {0: "padding", **{i + 1: n for i, n in enumerate(CLASS_NAMES)}}
# overlay colours (RGB) for labels 1..5
PALETTE = np.array(
    [
        [112, 48, 160],  # skin
        [0, 168, 107],  # fat
        [25, 25, 112],  # fat fascia
        [50, 205, 50],  # muscle
        [34, 139, 34],  # muscle fascia
    ],
    dtype=np.uint8,
)

SPLITS = ("train", "val", "test")


class FormatError(ValueError):
    """A file does not follow its documented layout."""


class LabelRangeError(FormatError):
    pass


class ValidationError(ValueError):
    """Loaded data violates a sample or manifest invariant."""


def check_rf(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float32)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValidationError(f"RF frame must be a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("RF frame contains non-finite values")
    return a


def check_grey(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float32)
    if a.ndim != 2:
        raise ValidationError(f"grey image must be 2-D, got shape {a.shape}")
    if a.size and (not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0):
        raise ValidationError("grey values must lie in [0, 1]")
    return a


def check_label(values) -> np.ndarray:
    a = np.asarray(values)
    if a.ndim != 2:
        raise ValidationError(f"label map must be 2-D, got shape {a.shape}")
    if a.size and (a.min() < 0 or a.max() > N_CLASSES):
        raise LabelRangeError(f"label values must lie in 0..{N_CLASSES}")
    return a.astype(np.uint8)


@dataclass(frozen=True)
class Sample:
    id: str
    patient: str
    rf: np.ndarray
    grey: np.ndarray
    label: np.ndarray
    native_rows: int = -1

    def __post_init__(self):
        rf = check_rf(self.rf)
        grey = check_grey(self.grey)
        label = check_label(self.label)
        if not (rf.shape == grey.shape == label.shape):
            raise ValidationError(
                f"sample {self.id!r}: shape mismatch rf={rf.shape} grey={grey.shape} label={label.shape}"
            )
        native = rf.shape[0] if self.native_rows < 0 else int(self.native_rows)
        if not 1 <= native <= rf.shape[0]:
            raise ValidationError(f"sample {self.id!r}: native_rows {native} outside 1..{rf.shape[0]}")
        object.__setattr__(self, "rf", rf)
        object.__setattr__(self, "grey", grey)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "native_rows", native)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rf.shape

    def with_(self, **changes) -> "Sample":
        return replace(self, **changes)


# -- RF binary ---------------------------------------------------------------


def write_rf_binary(frame, path) -> None:
    a = check_rf(frame)
    rows, cols = a.shape
    with open(path, "wb") as f:
        f.write(RF_HEADER.pack(RF_MAGIC, rows, cols))
        f.write(a.astype("<f4", copy=False).tobytes(order="C"))


def read_rf_binary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < RF_HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(data)}")
    magic, rows, cols = RF_HEADER.unpack_from(data)
    if magic != RF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: invalid dims {rows}x{cols} at byte offset 4")
    need = RF_HEADER.size + 4 * rows * cols
    if len(data) < need:
        raise FormatError(
            f"{path}: truncated payload, expected {need} bytes, file ends at byte offset {len(data)}"
        )
    if len(data) > need:
        raise FormatError(f"{path}: {len(data) - need} trailing bytes after byte offset {need}")
    values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=RF_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(
            f"{path}: non-finite value at byte offset {RF_HEADER.size + 4 * int(bad[0])}"
        )
    return values.astype(np.float32).reshape(rows, cols)


# -- PGM -----------------------------------------------------------------------


def _read_pgm_bytes(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header at byte offset {pos}")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before raster
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: bad magic {tokens[0]!r}, expected P5")
    try:
        cols, rows, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported, expected 255")
    if len(data) - pos < rows * cols:
        raise FormatError(f"{path}: truncated raster, file ends at byte offset {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=rows * cols, offset=pos).reshape(rows, cols)


def _write_pgm_bytes(arr: np.ndarray, path) -> None:
    rows, cols = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def read_grey_pgm(path) -> np.ndarray:
    return (_read_pgm_bytes(path).astype(np.float32) / np.float32(255.0)).astype(np.float32)


def write_grey_pgm(image, path) -> None:
    a = check_grey(image)
    _write_pgm_bytes(np.rint(a.astype(np.float64) * 255.0).astype(np.uint8), path)


def read_label_pgm(path) -> np.ndarray:
    raw = _read_pgm_bytes(path)
    if raw.size and raw.max() > N_CLASSES:
        idx = int(np.argmax(raw > N_CLASSES))
        raise LabelRangeError(f"{path}: label value {int(raw.flat[idx])} at pixel {idx} outside 0..{N_CLASSES}")
    return raw.copy()


def write_label_pgm(label, path) -> None:
    _write_pgm_bytes(check_label(label), path)


# -- manifest / dataset ---------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    patient: str
    rf: str
    grey: str
    label: str
    native_rows: int
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "format": "wnet-dataset",
            "version": 1,
            "samples": [vars(e) for e in self.entries],
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from exc
        entries = []
        seen = set()
        for raw in doc.get("samples", []):
            try:
                e = ManifestEntry(
                    id=str(raw["id"]),
                    patient=str(raw.get("patient", "")),
                    rf=raw["rf"],
                    grey=raw["grey"],
                    label=raw["label"],
                    native_rows=int(raw["native_rows"]),
                    split=raw["split"],
                )
            except KeyError as exc:
                raise ValidationError(f"{path}: manifest entry missing field {exc}") from exc
            if e.split not in SPLITS:
                raise ValidationError(f"sample {e.id!r}: unknown split {e.split!r}")
            if e.id in seen:
                raise ValidationError(f"sample {e.id!r} listed twice")
            seen.add(e.id)
            entries.append(e)
        return cls(entries)


def load_sample(entry: ManifestEntry, root) -> Sample:
    root = Path(root)
    rf = read_rf_binary(root / entry.rf)
    grey = read_grey_pgm(root / entry.grey)
    label = read_label_pgm(root / entry.label)
    return Sample(entry.id, entry.patient, rf, grey, label, entry.native_rows)


def load_dataset(manifest_path) -> tuple[list[Sample], dict[str, list[Sample]]]:
    """Load every sample in a manifest.

    Returns the samples in manifest order and a dict mapping each split name
    to its samples (also in manifest order).
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    manifest = DatasetManifest.load(manifest_path)
    samples = [load_sample(e, manifest_path.parent) for e in manifest.entries]
    splits = {s: [] for s in SPLITS}
    for entry, sample in zip(manifest.entries, samples):
        splits[entry.split].append(sample)
    return samples, splits


def save_dataset(samples, splits, out_dir) -> DatasetManifest:
    """Write samples in the dataset directory layout; ``splits`` maps id -> split."""
    out = Path(out_dir)
    for sub in ("rf", "grey", "label"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest()
    for s in samples:
        entry = ManifestEntry(
            id=s.id,
            patient=s.patient,
            rf=f"rf/{s.id}.rfb",
            grey=f"grey/{s.id}.pgm",
            label=f"label/{s.id}.pgm",
            native_rows=s.native_rows,
            split=splits[s.id],
        )
        write_rf_binary(s.rf, out / entry.rf)
        write_grey_pgm(s.grey, out / entry.grey)
        write_label_pgm(s.label, out / entry.label)
        manifest.entries.append(entry)
    manifest.dump(out / "manifest.json")
    return manifest


def split_counts(n: int, ratios=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    """Integer split sizes for ``n`` items; rounding remainder goes to train."""
    total = float(sum(ratios))
    val = int(np.floor(n * ratios[1] / total + 1e-9))
    test = int(np.floor(n * ratios[2] / total + 1e-9))
    return n - val - test, val, test


def assign_splits(ids, ratios=(0.6, 0.2, 0.2)) -> dict[str, str]:
    n_train, n_val, _ = split_counts(len(ids), ratios)
    out = {}
    for i, sid in enumerate(ids):
        out[sid] = "train" if i < n_train else "val" if i < n_train + n_val else "test"
    return out


def ensure_dir(path) -> Path:
    os.makedirs(path, exist_ok=True)
    return Path(path)
