"""
Artifact I/O: point-cloud and table CSVs, and the binary model file.

Model file layout (all integers little-endian)::

    b"GSEMODEL"                  8-byte magic
    uint32 format version
    uint32 header length L
    L bytes UTF-8 JSON header    params, provenance, summary, array table
    arrays                       '<f8', row-major, in header order

Floats in the JSON header are written with ``repr`` precision, so a saved
model reloads to bit-identical state.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from gse.errors import DimensionMismatch, ModelFormatError
from gse.manifolds import PointCloud
from gse.model import GseModel
from gse.neighborhoods import HyperParams

MAGIC = b"GSEMODEL"
FORMAT_VERSION = 1
_ARRAYS = ("X", "frames", "eigenvalues", "v_star", "v_ort", "v_field", "h", "Y")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """UTF-8 CSV with a header row; floats keep full precision."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(_fmt(v)) for v in row))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _csv_cell(s: str) -> str:
    if any(c in s for c in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        return header, [row for row in reader if row]


def cloud_columns(p: int, q: int = 0) -> list[str]:
    return [f"x{k + 1}" for k in range(p)] + [f"b{k + 1}" for k in range(q)]


def write_cloud(path, cloud: PointCloud) -> None:
    """One row per point: ``x1..xp`` then the hidden ``b1..bq`` when known."""
    q = 0 if cloud.params is None else cloud.params.shape[1]
    data = cloud.points if q == 0 else np.hstack([cloud.points, cloud.params])
    write_table(path, cloud_columns(cloud.points.shape[1], q), data.tolist())


def read_matrix(path, prefix: str) -> np.ndarray:
    """Columns named ``{prefix}1..{prefix}k`` as an (n, k) float array."""
    header, rows = read_table(path)
    cols = [i for i, h in enumerate(header) if h.startswith(prefix) and h[len(prefix):].isdigit()]
    cols.sort(key=lambda i: int(header[i][len(prefix):]))
    if not cols:
        raise DimensionMismatch(f"{path}: no '{prefix}1..' columns in header {header}")
    try:
        return np.array([[float(r[i]) for i in cols] for r in rows], dtype=float).reshape(len(rows), len(cols))
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed numeric row ({exc})") from exc


def read_cloud(path) -> PointCloud:
    points = read_matrix(path, "x")
    header, _ = read_table(path)
    params = read_matrix(path, "b") if any(h.startswith("b") for h in header) else None
    return PointCloud(points=points, params=params)


# -- model file ------------------------------------------------------------------


def model_to_bytes(model: GseModel) -> bytes:
    table, blobs = [], []
    for name in _ARRAYS:
        arr = getattr(model, name)
        if arr is None:
            continue
        arr = np.ascontiguousarray(arr, dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = {
        "format_version": FORMAT_VERSION,
        "params": asdict(model.params),
        "provenance": model.provenance,
        "summary": model.summary,
        "arrays": table,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(hb)) + hb + b"".join(blobs)


def model_from_bytes(data: bytes) -> GseModel:
    if data[:8] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if len(data) < 16:
        raise ModelFormatError("truncated model header")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from exc
    offset = 16 + hlen
    arrays: dict[str, Optional[np.ndarray]] = {name: None for name in _ARRAYS}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise ModelFormatError(f"truncated array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=nbytes // 8,
                                              offset=offset).reshape(shape).astype(float)
        offset += nbytes
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes after the last array")
    missing = [k for k in _ARRAYS if k != "v_ort" and arrays[k] is None]
    if missing:
        raise ModelFormatError(f"model file lacks arrays {missing}")
    return GseModel(params=HyperParams(**header["params"]), summary=header["summary"],
                    provenance=header["provenance"], **arrays)


def save_model(model: GseModel, path) -> None:
    atomic_write_bytes(path, model_to_bytes(model))


def load_model(path) -> GseModel:
    return model_from_bytes(Path(path).read_bytes())
