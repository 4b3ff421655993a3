"""Point-cloud file I/O: PLY (ascii / binary little-endian), XYZ, CSV.

PLY is the canonical interchange format.  Vertex layout on write:
x, y, z as float64, red/green/blue as uchar, class as uchar, every
feature column as a float32 property named exactly like the feature.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

from terrafeat.cloud import PointCloud
from terrafeat.errors import FileFormatError

logger = logging.getLogger(__name__)

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_COLOR_NAMES = ("red", "green", "blue")
_COLOR_ALIASES = {"r": "red", "g": "green", "b": "blue"}


def load_cloud(path: str | os.PathLike, format_hint: str | None = None,
               nonfinite: str = "drop") -> PointCloud:
    """Load a point cloud from a PLY, XYZ, or CSV file.

    Args:
        path: input file.
        format_hint: one of "ply", "xyz", "csv"; inferred from the
            extension when omitted.
        nonfinite: policy for non-finite coordinates, "drop" removes the
            offending points (warning with the count), "reject" raises.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    fmt = format_hint or _infer_format(path)
    if fmt == "ply":
        cloud = _load_ply(path)
    elif fmt in ("xyz", "csv"):
        cloud = _load_table(path)
    else:
        raise FileFormatError(f"unknown format {fmt!r} for {path}")
    return _apply_nonfinite_policy(cloud, nonfinite, path)


def save_cloud(cloud: PointCloud, path: str | os.PathLike,
               format: str = "ply_binary") -> None:
    """Write a cloud as "ply_ascii", "ply_binary", or "csv"."""
    path = Path(path)
    if format == "ply_ascii":
        _save_ply(cloud, path, binary=False)
    elif format == "ply_binary":
        _save_ply(cloud, path, binary=True)
    elif format == "csv":
        _save_csv(cloud, path)
    else:
        raise FileFormatError(f"unknown output format {format!r}")


def _infer_format(path: Path) -> str:
    ext = path.suffix.lower().lstrip(".")
    if ext in ("ply", "csv", "xyz"):
        return ext
    if ext in ("txt", "pts"):
        return "xyz"
    raise FileFormatError(f"cannot infer format from extension of {path}")


def _apply_nonfinite_policy(cloud: PointCloud, policy: str, path: Path) -> PointCloud:
    finite = np.isfinite(cloud.positions).all(axis=1)
    bad = int(len(cloud) - finite.sum())
    if bad == 0:
        return cloud
    if policy == "reject":
        raise FileFormatError(f"{path}: {bad} point(s) with non-finite coordinates")
    if policy != "drop":
        raise ValueError(f"unknown non-finite policy {policy!r}")
    logger.warning("%s: dropped %d point(s) with non-finite coordinates", path, bad)
    return cloud.select(np.flatnonzero(finite))


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

def _load_ply(path: Path) -> PointCloud:
    with open(path, "rb") as f:
        binary, count, props = _parse_ply_header(f, path)
        dtype = np.dtype([(name, "<" + code) for name, code in props])
        if binary:
            data = np.fromfile(f, dtype=dtype, count=count)
            if len(data) != count:
                raise FileFormatError(f"{path}: truncated vertex data")
        else:
            raw = np.loadtxt(f, dtype=np.float64, max_rows=count, ndmin=2)
            if raw.size == 0:
                raw = raw.reshape(0, len(props))
            if raw.shape != (count, len(props)):
                raise FileFormatError(f"{path}: inconsistent vertex rows")
            data = np.zeros(count, dtype=dtype)
            for j, (name, _) in enumerate(props):
                data[name] = raw[:, j]
    return _columns_to_cloud({name: data[name] for name, _ in props}, path)


def _parse_ply_header(f, path: Path):
    if f.readline().strip() != b"ply":
        raise FileFormatError(f"{path}: missing 'ply' magic")
    binary = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        line = f.readline()
        if not line:
            raise FileFormatError(f"{path}: header ended prematurely")
        tokens = line.decode("ascii", "replace").split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] == "ascii":
                binary = False
            elif tokens[1] == "binary_little_endian":
                binary = True
            else:
                raise FileFormatError(f"{path}: unsupported format {tokens[1]}")
        elif tokens[0] == "element":
            if tokens[1] == "vertex":
                count = int(tokens[2])
                in_vertex = True
            else:
                if count is None:
                    raise FileFormatError(
                        f"{path}: element {tokens[1]} precedes vertex element")
                in_vertex = False
        elif tokens[0] == "property" and in_vertex:
            if tokens[1] == "list":
                raise FileFormatError(f"{path}: list properties are unsupported")
            code = _PLY_DTYPES.get(tokens[1])
            if code is None:
                raise FileFormatError(f"{path}: unknown property type {tokens[1]}")
            props.append((tokens[2], code))
        elif tokens[0] == "end_header":
            break
    if binary is None or count is None:
        raise FileFormatError(f"{path}: malformed header")
    if not props:
        raise FileFormatError(f"{path}: no vertex properties")
    return binary, count, props


def _save_ply(cloud: PointCloud, path: Path, binary: bool) -> None:
    names, codes, columns = _cloud_to_columns(cloud)
    rev = {v: k for k, v in _PLY_DTYPES.items() if k in (
        "char", "uchar", "short", "ushort", "int", "uint", "float", "double")}
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property {rev[c]} {n}" for n, c in zip(names, codes)]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.zeros(len(cloud), dtype=[(n, "<" + c) for n, c in zip(names, codes)])
            for n, col in zip(names, columns):
                rec[n] = col
            rec.tofile(f)
        else:
            fmts = {"f8": "%.17g", "f4": "%.9g", "u1": "%d"}
            row_fmt = " ".join(fmts[c] for c in codes).encode() + b"\n"
            stacked = list(zip(*[c.tolist() for c in columns])) if len(cloud) else []
            for row in stacked:
                f.write(row_fmt % row)


def _cloud_to_columns(cloud: PointCloud):
    names = ["x", "y", "z"]
    codes = ["f8", "f8", "f8"]
    columns = [cloud.positions[:, 0], cloud.positions[:, 1], cloud.positions[:, 2]]
    if cloud.colors is not None:
        names += list(_COLOR_NAMES)
        codes += ["u1"] * 3
        columns += [cloud.colors[:, 0], cloud.colors[:, 1], cloud.colors[:, 2]]
    if cloud.labels is not None:
        names.append("class")
        codes.append("u1")
        columns.append(cloud.labels)
    for feat, col in cloud.features.items():
        names.append(feat)
        codes.append("f4")
        columns.append(col)
    return names, codes, columns


def _columns_to_cloud(columns: dict[str, np.ndarray], path: Path) -> PointCloud:
    cols = {(_COLOR_ALIASES.get(k, k)): v for k, v in columns.items()}
    missing = [axis for axis in ("x", "y", "z") if axis not in cols]
    if missing:
        raise FileFormatError(f"{path}: missing coordinate column(s) {missing}")
    n = len(cols["x"])
    positions = np.empty((n, 3), dtype=np.float64)
    for j, axis in enumerate(("x", "y", "z")):
        positions[:, j] = cols[axis]

    colors = None
    if all(c in cols for c in _COLOR_NAMES):
        colors = np.empty((n, 3), dtype=np.uint8)
        for j, c in enumerate(_COLOR_NAMES):
            colors[:, j] = np.clip(np.round(cols[c].astype(np.float64)), 0, 255)

    labels = None
    if "class" in cols:
        labels = np.clip(np.round(cols["class"].astype(np.float64)), 0, 255).astype(np.uint8)

    skip = {"x", "y", "z", "class", *_COLOR_NAMES}
    features = {k: v.astype(np.float32) for k, v in cols.items() if k not in skip}
    return PointCloud(positions, colors, labels, features)


# ---------------------------------------------------------------------------
# XYZ / CSV tables
# ---------------------------------------------------------------------------

def _load_table(path: Path) -> PointCloud:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if not first:
            return PointCloud(np.empty((0, 3)))
        delim = "," if "," in first else None
        tokens = [t.strip() for t in first.split(delim)]
        header = not _all_numeric(tokens)
        f.seek(0)
        data = np.loadtxt(f, delimiter=delim, skiprows=1 if header else 0, ndmin=2)
    if data.size == 0:
        ncols = len(tokens)
        data = data.reshape(0, ncols if not header else len(tokens))
    if header:
        names = tokens
        if len(names) != data.shape[1]:
            raise FileFormatError(f"{path}: header/body column count mismatch")
    else:
        names = _positional_names(data.shape[1], path)
    return _columns_to_cloud({n: data[:, j] for j, n in enumerate(names)}, path)


def _all_numeric(tokens: list[str]) -> bool:
    try:
        for t in tokens:
            float(t)
        return True
    except ValueError:
        return False


def _positional_names(ncols: int, path: Path) -> list[str]:
    if ncols == 3:
        return ["x", "y", "z"]
    if ncols == 6:
        return ["x", "y", "z", "red", "green", "blue"]
    if ncols == 7:
        return ["x", "y", "z", "red", "green", "blue", "class"]
    raise FileFormatError(
        f"{path}: {ncols} columns without a header line is ambiguous; "
        "add a header naming the columns")


def _save_csv(cloud: PointCloud, path: Path) -> None:
    names, codes, columns = _cloud_to_columns(cloud)
    fmts = {"f8": "%.17g", "f4": "%.9g", "u1": "%d"}
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(names) + "\n")
        row_fmt = ",".join(fmts[c] for c in codes) + "\n"
        for row in zip(*[c.tolist() for c in columns]):
            f.write(row_fmt % row)
