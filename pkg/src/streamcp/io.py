"""Text slice files, metric CSVs and ground-truth sidecars.

A slice file starts with ``dims: I1 I2 ... IN`` and then lists one observed
entry per line as ``i1,i2,...,iN,value`` with 1-based indices.  Blank lines
and ``#`` comments are ignored.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import DimensionError, FormatError
from .synthetic import GroundTruth
from .tensor import ObservationSet

METRIC_FIELDS = ("t", "relative_error", "estimated_rank", "precision", "recall", "burn_in")
SIDECAR_VERSION = 1


def parse_slice_text(text, source="<slice>"):
    """Parse the slice format from a string; see :func:`parse_slice_file`."""
    shape = None
    rows, values = [], []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if shape is None:
            key, sep, rest = line.partition(":")
            if not sep or key.strip().lower() != "dims":
                raise FormatError("expected 'dims: I1 ... IN' header", source, lineno)
            try:
                shape = tuple(int(tok) for tok in rest.split())
            except ValueError:
                raise FormatError(f"non-integer dimension in {rest.strip()!r}", source, lineno) from None
            if not shape or any(d < 1 for d in shape):
                raise FormatError("dimensions must be positive integers", source, lineno)
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != len(shape) + 1:
            raise FormatError(f"expected {len(shape)} indices and a value, got {len(parts)} fields", source, lineno)
        try:
            idx = tuple(int(p) for p in parts[:-1])
            value = float(parts[-1])
        except ValueError:
            raise FormatError(f"cannot parse entry {line!r}", source, lineno) from None
        if any(not 1 <= i <= d for i, d in zip(idx, shape)):
            raise FormatError(f"index {idx} outside dims {shape}", source, lineno)
        if not math.isfinite(value):
            raise FormatError(f"non-finite value {parts[-1]!r}", source, lineno)
        if idx in seen:
            raise FormatError(f"duplicate index {idx}", source, lineno)
        seen.add(idx)
        rows.append([i - 1 for i in idx])
        values.append(value)
    if shape is None:
        raise FormatError("missing 'dims:' header", source)
    return ObservationSet(shape, np.array(rows, dtype=np.int64).reshape(-1, len(shape)), np.array(values))


def parse_slice_file(path):
    """Read one slice file into an :class:`~streamcp.tensor.ObservationSet`.

    Raises
    ------
    FormatError
        On a missing header, a malformed or out-of-range line (the message
        carries the line number) or a duplicate index.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not UTF-8 text: {exc}", str(path)) from None
    return parse_slice_text(text, str(path))


def format_slice(obs):
    """Slice-file text for ``obs``; values are written with ``repr`` so they round-trip."""
    lines = ["dims: " + " ".join(str(d) for d in obs.shape)]
    for idx, value in zip(obs.indices, obs.values):
        lines.append(",".join(str(int(i) + 1) for i in idx) + "," + repr(float(value)))
    return "\n".join(lines) + "\n"


def write_slice_file(obs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_slice(obs))


def write_dense_slice(x, path):
    """Write a dense array as a fully observed slice file."""
    write_slice_file(ObservationSet.from_dense(x), path)


def slice_paths(source):
    """Slice files of a stream in filename order.

    ``source`` is a directory (every ``*.txt`` file in it) or a text file
    listing one slice path per line, relative paths resolved against the
    list's directory.
    """
    source = Path(source)
    if source.is_dir():
        paths = sorted(p for p in source.iterdir() if p.suffix == ".txt" and p.is_file())
    elif source.is_file():
        base = source.parent
        paths = []
        for line in source.read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                p = Path(line)
                paths.append(p if p.is_absolute() else base / p)
    else:
        raise FileNotFoundError(f"no such slice directory or list: {source}")
    if not paths:
        raise FormatError("no slice files found", str(source))
    return paths


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_metrics_csv(scores, path):
    """Write per-slice scores as CSV (UTF-8, LF line endings).

    ``scores`` holds :class:`~streamcp.metrics.SliceScore` objects or dicts
    with the same keys.  Missing values become empty fields.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
        for score in scores:
            get = score.get if isinstance(score, dict) else lambda k, s=score: getattr(s, k, None)
            writer.writerow([_cell(get(k)) for k in METRIC_FIELDS])


def read_metrics_csv(path):
    """Rows of a metrics CSV as dicts with ``None`` for empty fields."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_FIELDS:
            raise FormatError(f"unexpected header {reader.fieldnames}", str(path))
        for row in reader:
            out.append({
                "t": int(row["t"]),
                "relative_error": float(row["relative_error"]) if row["relative_error"] else None,
                "estimated_rank": int(row["estimated_rank"]),
                "precision": float(row["precision"]) if row["precision"] else None,
                "recall": float(row["recall"]) if row["recall"] else None,
                "burn_in": row["burn_in"] == "true",
            })
    return out


def write_truth_sidecar(truth, path):
    """JSON ground truth: factors, outlier records (1-based indices), settings
    and, when known, the dense corrupted data slices."""
    doc = {
        "version": SIDECAR_VERSION,
        "rank": truth.rank,
        "seed": truth.seed,
        "noise_sigma": truth.noise_sigma,
        "sample_fraction": truth.sample_fraction,
        "outlier_fraction": truth.outlier_fraction,
        "factors": [np.asarray(f).tolist() for f in truth.factors],
        "outliers": [
            {"indices": (np.asarray(idx) + 1).tolist(), "deltas": np.asarray(deltas).tolist()}
            for idx, deltas in truth.outliers
        ],
        "data": [np.asarray(x).tolist() for x in truth.data],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_truth_sidecar(path):
    """Inverse of :func:`write_truth_sidecar`."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("version") != SIDECAR_VERSION:
            raise FormatError(f"unsupported sidecar version {doc.get('version')}", str(path))
        factors = [np.array(f, dtype=np.float64) for f in doc["factors"]]
        order = len(factors) - 1
        outliers = [
            (np.array(o["indices"], dtype=np.int64).reshape(-1, order) - 1, np.array(o["deltas"], dtype=np.float64))
            for o in doc["outliers"]
        ]
        truth = GroundTruth(
            factors=factors,
            rank=int(doc["rank"]),
            seed=doc["seed"],
            outliers=outliers,
            noise_sigma=float(doc["noise_sigma"]),
            sample_fraction=float(doc["sample_fraction"]),
            outlier_fraction=float(doc["outlier_fraction"]),
            data=[np.array(x, dtype=np.float64) for x in doc.get("data", [])],
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, DimensionError) as exc:
        raise FormatError(f"malformed sidecar: {exc}", str(path)) from None
    return truth
