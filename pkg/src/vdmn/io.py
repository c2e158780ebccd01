"""File formats: model documents, dataset files and CSV tables.

Model document (JSON)::

    {"format": "vdmn-model", "format_version": 1, "depth": N,
     "leaf_phase": [...], "weight_param": [...], "leaf_weights": [...],
     "angle_mean": [...], "angle_logvar": [...], "df_logvar": [...],
     "normalization": {...}, "training": {...}}

``weight_param`` holds the free parameters (leaf weights are their
softplus); ``leaf_weights`` is written for inspection only. Floats are
written with ``repr`` so loading reproduces every array bit for bit.

Dataset file (JSON lines): a header record
``{"format": "vdmn-dataset", "format_version": 1, "fields": [...]}``
followed by one record per triplet with fields ``c1, c2, ch`` (distinct
entries 11, 22, 33, 12, 13, 23), ``member_id``, ``scale`` and ``split``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .propagation import VdmnParams, softplus
from .riemann import unvec, vec

__all__ = [
    "FormatError",
    "MODEL_FORMAT_VERSION",
    "DATASET_FORMAT_VERSION",
    "model_document",
    "save_model",
    "load_model",
    "save_dataset",
    "load_dataset",
    "write_csv",
    "read_measurements",
    "hash_arrays",
]

MODEL_FORMAT_VERSION = 1
DATASET_FORMAT_VERSION = 1
DATASET_FIELDS = ["c1", "c2", "ch", "member_id", "scale", "split"]
SPLITS = ("train", "val", "test")


class FormatError(ValueError):
    """Unreadable or schema-violating file; ``offset`` is a byte offset when known."""

    def __init__(self, message, field=None, offset=None):
        super().__init__(message)
        self.field = field
        self.offset = offset


def hash_arrays(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode() + str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def model_document(params: VdmnParams, training: dict | None = None) -> dict:
    return {
        "format": "vdmn-model",
        "format_version": MODEL_FORMAT_VERSION,
        "depth": int(params.depth),
        "leaf_phase": [int(v) for v in params.leaf_phase],
        "weight_param": [float(v) for v in params.weight_param],
        "leaf_weights": [float(v) for v in softplus(params.weight_param)],
        "angle_mean": [float(v) for v in params.angle_mean],
        "angle_logvar": [float(v) for v in params.angle_logvar],
        "df_logvar": [float(v) for v in params.df_logvar],
        "normalization": dict(params.normalization),
        "training": dict(training or {}),
    }


def save_model(params: VdmnParams, path, training: dict | None = None) -> None:
    text = json.dumps(model_document(params, training), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _float_list(doc, name, n):
    if name not in doc:
        raise FormatError(f"missing field {name!r}", field=name)
    v = doc[name]
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise FormatError(f"field {name!r} must be a list of numbers", field=name)
    if len(v) != n:
        raise FormatError(f"field {name!r} has length {len(v)}, expected {n} for the declared depth", field=name)
    return np.array(v, dtype=float)


def parse_model(doc: dict) -> tuple[VdmnParams, dict]:
    if not isinstance(doc, dict) or doc.get("format") != "vdmn-model":
        raise FormatError("not a VDMN model document", field="format")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {version!r}", field="format_version")
    depth = doc.get("depth")
    if not isinstance(depth, int) or isinstance(depth, bool) or depth < 1:
        raise FormatError("field 'depth' must be a positive integer", field="depth")
    L = 2**depth
    phase = _float_list(doc, "leaf_phase", L)
    if not np.all(np.isin(phase, (1, 2))):
        raise FormatError("field 'leaf_phase' must contain only 1 and 2", field="leaf_phase")
    arrays = {
        "weight_param": _float_list(doc, "weight_param", L),
        "angle_mean": _float_list(doc, "angle_mean", L - 1),
        "angle_logvar": _float_list(doc, "angle_logvar", L - 1),
        "df_logvar": _float_list(doc, "df_logvar", L // 2),
    }
    if "leaf_weights" in doc:
        _float_list(doc, "leaf_weights", L)
    norm = doc.get("normalization", {"reference": "C1_11"})
    if not isinstance(norm, dict):
        raise FormatError("field 'normalization' must be an object", field="normalization")
    params = VdmnParams(depth, leaf_phase=phase.astype(int), normalization=norm, **arrays)
    return params, dict(doc.get("training", {}))


def load_model(path) -> VdmnParams:
    """Read a model document; see :func:`load_model_with_meta` for metadata."""
    return load_model_with_meta(path)[0]


def load_model_with_meta(path) -> tuple[VdmnParams, dict]:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text at byte {exc.start}", offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        offset = len(exc.doc[: exc.pos].encode("utf-8"))
        raise FormatError(f"{path}: parse error at byte {offset}: {exc.msg}", offset=offset) from exc
    return parse_model(doc)


# ---------------------------------------------------------------------------
# datasets


def save_dataset(splits: dict, path) -> None:
    """Write ``{"train": Dataset, ...}`` as a JSON-lines dataset file."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": "vdmn-dataset", "format_version": DATASET_FORMAT_VERSION, "fields": DATASET_FIELDS}
        fh.write(json.dumps(header) + "\n")
        for name in SPLITS:
            if name not in splits:
                continue
            d = splits[name]
            v1, v2, vh = vec(d.c1), vec(d.c2), vec(d.ch)
            for i in range(len(d)):
                rec = {
                    "c1": v1[i].tolist(),
                    "c2": v2[i].tolist(),
                    "ch": vh[i].tolist(),
                    "member_id": int(d.member_id[i]),
                    "scale": float(d.scale[i]),
                    "split": name,
                }
                fh.write(json.dumps(rec) + "\n")


def load_dataset(path) -> dict:
    """Read a dataset file into ``{"train": Dataset, "val": ..., "test": ...}``."""
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    offset = 0
    records = {s: [] for s in SPLITS}
    for lineno, line in enumerate(lines):
        start = offset
        offset += len(line) + 1
        if not line.strip():
            continue
        try:
            rec = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            pos = getattr(exc, "pos", getattr(exc, "start", 0))
            raise FormatError(f"{path}: parse error at byte {start + pos} (line {lineno + 1})",
                              offset=start + pos) from exc
        if lineno == 0:
            if rec.get("format") != "vdmn-dataset":
                raise FormatError("missing dataset header", field="format", offset=0)
            if rec.get("format_version") != DATASET_FORMAT_VERSION:
                raise FormatError(f"unsupported format_version {rec.get('format_version')!r}",
                                  field="format_version", offset=0)
            continue
        for name in DATASET_FIELDS:
            if name not in rec:
                raise FormatError(f"line {lineno + 1}: missing field {name!r}", field=name, offset=start)
        if rec["split"] not in records:
            raise FormatError(f"line {lineno + 1}: unknown split {rec['split']!r}", field="split", offset=start)
        for name in ("c1", "c2", "ch"):
            if not isinstance(rec[name], list) or len(rec[name]) != 6:
                raise FormatError(f"line {lineno + 1}: field {name!r} needs 6 numbers", field=name, offset=start)
        records[rec["split"]].append(rec)
    out = {}
    for name, recs in records.items():
        out[name] = Dataset(
            unvec(np.array([r["c1"] for r in recs], dtype=float).reshape(-1, 6)),
            unvec(np.array([r["c2"] for r in recs], dtype=float).reshape(-1, 6)),
            unvec(np.array([r["ch"] for r in recs], dtype=float).reshape(-1, 6)),
            np.array([r["member_id"] for r in recs], dtype=int),
            np.array([r["scale"] for r in recs], dtype=float),
        )
    return out


def dataset_hash(splits: dict) -> str:
    parts = []
    for name in SPLITS:
        if name in splits:
            d = splits[name]
            parts += [d.c1, d.c2, d.ch, d.member_id, d.scale]
    return hash_arrays(*parts)


# ---------------------------------------------------------------------------
# CSV


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    """Write rows with floats printed to 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


MEASUREMENT_COLUMNS = ["C11", "C22", "C33", "C12", "C13", "C23"]


def write_measurements(path, C) -> None:
    """Write (n, 3, 3) measurements; unmeasured (NaN) entries are left blank."""
    v = vec(np.asarray(C, dtype=float).reshape(-1, 3, 3))
    rows = [["" if not np.isfinite(x) else x for x in row] for row in v]
    write_csv(path, MEASUREMENT_COLUMNS, rows)


def read_measurements(path) -> np.ndarray:
    """Read a measurement CSV; missing columns or blank cells become NaN."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        unknown = set(reader.fieldnames or []) - set(MEASUREMENT_COLUMNS)
        if unknown:
            raise FormatError(f"unknown measurement columns {sorted(unknown)}", field=sorted(unknown)[0])
        rows = []
        for row in reader:
            vals = []
            for c in MEASUREMENT_COLUMNS:
                cell = (row.get(c) or "").strip()
                try:
                    vals.append(float(cell) if cell else np.nan)
                except ValueError as exc:
                    raise FormatError(f"bad number {cell!r} in column {c}", field=c) from exc
            rows.append(vals)
    if not rows:
        raise FormatError("measurement file has no rows")
    return unvec(np.array(rows))
