"""CSV/JSON readers and writers and the run manifest."""
import csv
import datetime as _dt
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "fmt", "write_csv", "write_json", "read_json", "read_univariate_csv", "read_functional_csv",
    "read_truth_csv", "read_matrix_csv", "write_matrix_csv", "RunManifest", "package_version",
]


def package_version():
    from importlib.metadata import PackageNotFoundError, version
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def fmt(v):
    """Round-trip text for a CSV cell: 17 significant digits for floats."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_matrix_csv(path, matrix, ids):
    """Dense matrix with an id header row and an id first column."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", *[fmt(i) for i in ids]])
        for i, row in zip(ids, matrix):
            w.writerow([fmt(i), *[fmt(v) for v in row]])


def read_matrix_csv(path):
    rows = _read_rows(path)
    header = rows[0][1]
    ids = header[1:]
    mat = []
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        mat.append([_num(v, path, lineno) for v in row[1:]])
    return ids, np.array(mat, dtype=float)


def _clean(obj):
    # JSON has no NaN/inf; numpy scalars and arrays become plain Python values
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_clean(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = [(i, r) for i, r in enumerate(csv.reader(f), start=1) if r]
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from e
    except (csv.Error, UnicodeDecodeError) as e:
        raise DataError(f"{path}: unreadable CSV ({e})") from e
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows


def _num(text, path, lineno):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"{path}:{lineno}: non-finite value {text!r}")
    return v


def _columns(path, required):
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0][1]]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}:1: missing column(s) {', '.join(missing)}")
    idx = [header.index(c) for c in required]
    out = []
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        out.append((lineno, [row[j].strip() for j in idx]))
    if not out:
        raise DataError(f"{path}: no data rows")
    return out


def read_univariate_csv(path):
    """Column ``y`` of a CSV file as a float vector."""
    return np.array([_num(v[0], path, ln) for ln, v in _columns(path, ["y"])])


def read_functional_csv(path):
    """Long-format curves (id, t, y); returns a FunctionalData with t rescaled to [0, 1]."""
    from .functional import FunctionalData
    rows = _columns(path, ["id", "t", "y"])
    ids = [v[0] for _, v in rows]
    t = [_num(v[1], path, ln) for ln, v in rows]
    y = [_num(v[2], path, ln) for ln, v in rows]
    return FunctionalData.from_long(ids, t, y)


def read_truth_csv(path):
    """Labels from an (id, label) file, in file order."""
    out = []
    for ln, (_, lab) in _columns(path, ["id", "label"]):
        try:
            out.append(int(lab))
        except ValueError:
            raise DataError(f"{path}:{ln}: label must be an integer, got {lab!r}") from None
    return np.array(out, dtype=np.int64)


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Everything needed to rerun a command. Timestamps are the only varying fields."""
    command: str
    argv: list
    seed: int
    config: dict
    version: str = field(default_factory=package_version)
    python: str = field(default_factory=lambda: sys.version.split()[0])
    numpy: str = field(default_factory=lambda: np.__version__)
    platform: str = field(default_factory=platform.platform)
    started: str = field(default_factory=_now)
    finished: str = None
    status: str = "running"
    counters: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def write(self, directory):
        write_json(Path(directory) / "manifest.json", self.to_dict())

    def finalize(self, directory, status="ok", counters=None):
        self.status = status
        self.finished = _now()
        if counters:
            self.counters.update({k: int(v) for k, v in counters.items()})
        self.write(directory)
