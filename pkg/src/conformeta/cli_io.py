"""File formats: trial tables, two-arm summaries, and result emission.

Trial tables are comma-separated with a header row. Columns named ``y``,
``v`` and ``m`` hold the observed effect, within-trial variance and
(optionally) the prior mean; every other column is a feature.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .conformal_krr import PredictionInterval
from .errors import InvalidInputError

RESERVED = ("y", "v", "m")
TWO_ARM_COLUMNS = ("m0", "mean0", "var0", "m1", "mean1", "var1")


@dataclass
class TrialTable:
    feature_names: list[str]
    X: np.ndarray
    y: np.ndarray | None
    v: np.ndarray | None
    m: np.ndarray | None

    def __len__(self) -> int:
        return self.X.shape[0]


def two_arm_to_effect(m0: int, mean0: float, var0: float, m1: int, mean1: float, var1: float) -> tuple[float, float]:
    """Difference in means and its variance from two-arm summary statistics."""
    if m0 < 2 or m1 < 2:
        raise InvalidInputError(f"group sizes must be >= 2, got m0={m0}, m1={m1}")
    if var0 < 0 or var1 < 0:
        raise InvalidInputError("group variances must be >= 0")
    return mean1 - mean0, var0 / m0 + var1 / m1


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    rows = [(reader.line_num, row) for row in reader if any(cell.strip() for cell in row)]
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0][1]]
    if len(set(header)) != len(header):
        raise InvalidInputError(f"{path}:1: duplicate column names")
    return header, rows[1:]


def _parse_matrix(path, header, rows) -> np.ndarray:
    out = np.empty((len(rows), len(header)))
    for r, (lineno, row) in enumerate(rows):
        if len(row) != len(header):
            raise InvalidInputError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        for c, cell in enumerate(row):
            try:
                val = float(cell)
            except ValueError:
                raise InvalidInputError(f"{path}:{lineno}: column {header[c]!r}: cannot parse {cell!r}") from None
            if not math.isfinite(val):
                raise InvalidInputError(f"{path}:{lineno}: column {header[c]!r}: non-finite value {cell!r}")
            out[r, c] = val
    return out


def load_trials(path, require: Iterable[str] = ("y", "v")) -> TrialTable:
    """Read a trial table, validating required columns and values."""
    header, rows = _read_rows(path)
    for col in require:
        if col not in header:
            raise InvalidInputError(f"{path}: missing required column {col!r}")
    data = _parse_matrix(path, header, rows)
    feats = [h for h in header if h not in RESERVED]
    X = data[:, [header.index(h) for h in feats]] if feats else np.zeros((len(rows), 0))

    def col(name):
        return data[:, header.index(name)].copy() if name in header else None

    v = col("v")
    if v is not None and np.any(v < 0):
        bad = int(np.flatnonzero(v < 0)[0])
        raise InvalidInputError(f"{path}:{rows[bad][0]}: column 'v' must be >= 0")
    return TrialTable(feature_names=feats, X=X, y=col("y"), v=v, m=col("m"))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if x == math.inf:
            return "+inf"
        if x == -math.inf:
            return "-inf"
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def write_trials(path, table: TrialTable) -> None:
    cols = list(table.feature_names)
    values = [table.X[:, i] for i in range(len(cols))]
    for name in RESERVED:
        arr = getattr(table, name)
        if arr is not None:
            cols.append(name)
            values.append(arr)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for r in range(len(table)):
            writer.writerow([_fmt(float(vals[r])) for vals in values])


def convert_two_arm(path) -> TrialTable:
    """Turn a table of two-arm summaries into a trial table."""
    header, rows = _read_rows(path)
    for col in TWO_ARM_COLUMNS:
        if col not in header:
            raise InvalidInputError(f"{path}: missing required column {col!r}")
    data = _parse_matrix(path, header, rows)
    ys, vs = [], []
    for r, (lineno, _) in enumerate(rows):
        args = [data[r, header.index(c)] for c in TWO_ARM_COLUMNS]
        if args[0] != int(args[0]) or args[3] != int(args[3]):
            raise InvalidInputError(f"{path}:{lineno}: group sizes must be integers")
        try:
            y, v = two_arm_to_effect(int(args[0]), args[1], args[2], int(args[3]), args[4], args[5])
        except InvalidInputError as exc:
            raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
        ys.append(y)
        vs.append(v)
    feats = [h for h in header if h not in TWO_ARM_COLUMNS and h not in RESERVED]
    X = data[:, [header.index(h) for h in feats]] if feats else np.zeros((len(rows), 0))
    m = data[:, header.index("m")].copy() if "m" in header else None
    return TrialTable(feats, X, np.array(ys), np.array(vs), m)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


def interval_record(iv: PredictionInterval, **extra) -> dict:
    rec = {
        "method": iv.method,
        "lower": iv.lower,
        "upper": iv.upper,
        "alpha": iv.alpha,
        "effective_confidence": iv.confidence,
        "n": iv.n,
        "lambda": iv.lam,
        "tau": iv.tau,
    }
    rec.update(extra)
    return rec


def _json_scalar(x) -> str:
    if isinstance(x, str):
        return json.dumps(x)
    if x is None:
        return "null"
    if isinstance(x, (float, np.floating)) and not math.isfinite(float(x)):
        return json.dumps(_fmt(x))
    return _fmt(x)


def format_records(records: list[dict], fmt: str = "json") -> str:
    """Serialize flat records; floats use the shortest round-tripping repr.

    Infinite values become the strings ``"-inf"``/``"+inf"``.
    """
    if fmt == "json":
        lines = []
        for rec in records:
            body = ", ".join(f"{json.dumps(k)}: {_json_scalar(v)}" for k, v in rec.items())
            lines.append("  {" + body + "}")
        return "[\n" + ",\n".join(lines) + "\n]\n" if lines else "[]\n"
    if fmt == "csv":
        if not records:
            return ""
        cols = list(records[0].keys())
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for rec in records:
            writer.writerow([_fmt(rec.get(c, "")) for c in cols])
        return buf.getvalue()
    raise InvalidInputError(f"unknown output format {fmt!r}")


def _decode(value):
    if isinstance(value, str):
        if value == "+inf":
            return math.inf
        if value == "-inf":
            return -math.inf
        if value == "nan":
            return math.nan
        if value in ("true", "false"):
            return value == "true"
        try:
            as_float = float(value)
        except ValueError:
            return value
        if value.lstrip("+-").isdigit():
            return int(value)
        return as_float
    return value


def parse_records(text: str, fmt: str = "json") -> list[dict]:
    """Inverse of :func:`format_records`."""
    if fmt == "json":
        raw = json.loads(text)
        return [{k: (_decode(v) if isinstance(v, str) and k != "method" else v) for k, v in rec.items()} for rec in raw]
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(text))
        return [{k: (v if k == "method" else _decode(v)) for k, v in row.items()} for row in reader]
    raise InvalidInputError(f"unknown output format {fmt!r}")


def emit(records: list[dict], out=None, fmt: str = "json") -> None:
    """Write records to ``out`` (a path) or stdout."""
    text = format_records(records, fmt)
    if out is None or str(out) == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise InvalidInputError(f"cannot write {out}: {exc}") from exc


def emit_stream(records: list[dict], stream: TextIO, fmt: str = "json") -> None:
    stream.write(format_records(records, fmt))
