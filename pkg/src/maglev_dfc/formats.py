"""On-disk formats: JSON documents with shaped matrices, and trajectory CSV.

Matrices are stored as ``{"shape": [r, c], "data": [[...], ...]}`` (row-major).
Python's float repr is the shortest string that round-trips, so JSON and CSV
output reproduce every double bit-for-bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

import numpy as np


def matrix_to_doc(M) -> dict:
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 1:
        return {"shape": [arr.shape[0]], "data": [float(v) for v in arr]}
    if arr.ndim == 0:
        return {"shape": [], "data": float(arr)}
    return {"shape": list(arr.shape), "data": [[float(v) for v in row] for row in arr]}


def matrix_from_doc(doc: dict) -> np.ndarray:
    shape = tuple(doc["shape"])
    arr = np.array(doc["data"], dtype=float)
    if arr.shape != shape:
        raise ValueError(f"shape header {shape} does not match data {arr.shape}")
    return arr


def _encode(obj: Any):
    if isinstance(obj, np.ndarray):
        return matrix_to_doc(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_encode(obj), indent=2, allow_nan=True)


def save_json(path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n")
    return path


def load_json(path) -> Any:
    return json.loads(Path(path).read_text())


def is_matrix_doc(doc: Any) -> bool:
    return isinstance(doc, dict) and set(doc) == {"shape", "data"}


def decode_matrices(doc: Any) -> Any:
    """Recursively turn every shaped-matrix node back into an ndarray."""
    if is_matrix_doc(doc):
        return matrix_from_doc(doc)
    if isinstance(doc, dict):
        return {k: decode_matrices(v) for k, v in doc.items()}
    if isinstance(doc, list):
        return [decode_matrices(v) for v in doc]
    return doc


def write_columns_csv(path, header: list[str], columns: list[np.ndarray]) -> Path:
    """Write equal-length 1-D columns with full double precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_columns_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body], dtype=float)
    return header, data.reshape(len(body), len(header))
