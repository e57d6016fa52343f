"""Binary and text formats for datasets, weights and results.

``DFL1`` (datasets and representation dumps)::

    b"DFL1" | u32 N | u32 D | u32 C | N*D float64 (row-major) | N u32 labels

``DFW1`` (weights)::

    b"DFW1" | u32 L | L x (u32 rows | u32 cols | rows*cols float64 | cols float64)

All integers and floats are little-endian.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .datagen import LabeledDataset
from .network import ParamSet

DATASET_MAGIC = b"DFL1"
WEIGHTS_MAGIC = b"DFW1"

_F64 = np.dtype("<f8")
_U32 = np.dtype("<u4")


class FormatError(ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated file while reading {what} at byte offset {self.pos} "
                f"(needed {n} bytes, {len(self.data) - self.pos} left)"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected):
        found = self.take(4, "magic")
        if found != expected:
            raise FormatError(f"{self.path}: bad magic {found!r}, expected {expected.decode()!r}")

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def array(self, dtype, count, what):
        return np.frombuffer(self.take(count * dtype.itemsize, what), dtype=dtype).copy()

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes after offset {self.pos}")


def _dfl1_bytes(features, labels, num_classes):
    features = np.ascontiguousarray(features, dtype=_F64)
    n, d = features.shape
    return b"".join([
        DATASET_MAGIC,
        struct.pack("<III", n, d, num_classes),
        features.tobytes(),
        np.ascontiguousarray(labels, dtype=_U32).tobytes(),
    ])


def write_dataset(dataset: LabeledDataset, path) -> Path:
    path = Path(path)
    path.write_bytes(_dfl1_bytes(dataset.features, dataset.labels, dataset.num_classes))
    return path


def _read_dfl1(path):
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    r.magic(DATASET_MAGIC)
    n, d, c = r.u32("N"), r.u32("D"), r.u32("C")
    features = r.array(_F64, n * d, "features").reshape(n, d)
    labels = r.array(_U32, n, "labels").astype(np.int64)
    r.finish()
    return features, labels, c


def read_dataset(path) -> LabeledDataset:
    features, labels, c = _read_dfl1(path)
    return LabeledDataset(features, labels, c)


def write_representation(matrix, path) -> Path:
    """Dump an activation matrix as DFL1 with zero labels and ``C = 0``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    path = Path(path)
    path.write_bytes(_dfl1_bytes(matrix, np.zeros(matrix.shape[0]), 0))
    return path


def read_representation(path) -> np.ndarray:
    return _read_dfl1(path)[0]


def write_params(params: ParamSet, path) -> Path:
    chunks = [WEIGHTS_MAGIC, struct.pack("<I", len(params))]
    for w, b in zip(params.weights, params.biases):
        rows, cols = w.shape
        chunks.append(struct.pack("<II", rows, cols))
        chunks.append(np.ascontiguousarray(w, dtype=_F64).tobytes())
        chunks.append(np.ascontiguousarray(b, dtype=_F64).tobytes())
    path = Path(path)
    path.write_bytes(b"".join(chunks))
    return path


def read_params(path) -> ParamSet:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    r.magic(WEIGHTS_MAGIC)
    n_layers = r.u32("layer count")
    weights, biases = [], []
    for i in range(n_layers):
        rows, cols = r.u32(f"layer {i} rows"), r.u32(f"layer {i} cols")
        weights.append(r.array(_F64, rows * cols, f"layer {i} weights").reshape(rows, cols))
        biases.append(r.array(_F64, cols, f"layer {i} biases"))
    r.finish()
    return ParamSet(weights, biases)


# ---------------------------------------------------------------------------
# CSV


def _fmt(x) -> str:
    # repr is the shortest string that round-trips a float64 exactly
    return repr(float(x))


def write_dataset_csv(dataset: LabeledDataset, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(dataset.n_features)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([_fmt(v) for v in row] + [int(label)])
    return path


def read_dataset_csv(path, num_classes=None) -> LabeledDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise FormatError(f"{path}: expected a header ending in 'label'")
        expected = [f"f{j}" for j in range(len(header) - 1)]
        if header[:-1] != expected:
            raise FormatError(f"{path}: feature columns must be named f0..f{len(header) - 2}")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            feats.append([float(v) for v in row[:-1]])
            labels.append(int(row[-1]))
    X = np.array(feats, dtype=np.float64).reshape(len(feats), len(header) - 1)
    y = np.array(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = max(int(y.max()) + 1 if y.size else 0, 2)
    return LabeledDataset(X, y, num_classes)


def load_dataset(path) -> LabeledDataset:
    """Read DFL1 or CSV depending on the file extension."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_dataset_csv(path)
    return read_dataset(path)


def save_dataset(dataset: LabeledDataset, path) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return write_dataset_csv(dataset, path)
    return write_dataset(dataset, path)


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_history_csv(history, path) -> Path:
    return write_rows(path, ["epoch", "lr", "train_loss", "train_acc"], history.rows())


def write_profile_csv(profile, path) -> Path:
    return write_rows(
        path, ["cut", "mean_acc", "std_acc", "n_seeds"],
        [(e.cut, e.mean_acc, e.std_acc, e.n_seeds) for e in profile.entries],
    )


def write_compliant_csv(result, path) -> Path:
    return write_rows(
        path, ["lambda", "mean_acc", "std_acc", "cos_dist"],
        [(p.strength, p.mean_acc, p.std_acc, p.cos_dist) for p in result.points],
    )


def write_curve_csv(curves, path) -> Path:
    rows = [row for curve in curves for row in curve.rows()]
    return write_rows(path, ["layer", "metric", "value"], rows)


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
