"""ASCII OBJ / PLY point-cloud I/O and the single-value area sidecar.

Floats are written with ``repr`` (shortest round-trip form), so save -> load
reproduces every coordinate bit for bit. Formatting and parsing never consult
the locale.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path

import numpy as np

from .data import PointCloud, unit


class ParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


def _fmt(values) -> str:
    return " ".join(repr(float(x)) for x in values)


def _floats(path, line_no, tokens, n):
    if len(tokens) < n:
        raise ParseError(path, line_no, f"expected {n} numbers, got {len(tokens)}")
    try:
        return [float(t) for t in tokens[:n]]
    except ValueError as exc:
        raise ParseError(path, line_no, str(exc)) from None


def _clean_normals(normals):
    """Renormalise only normals that are off unit length by more than 1e-9."""
    lengths = np.linalg.norm(normals, axis=1)
    bad = np.abs(lengths - 1.0) > 1e-9
    if np.any(bad):
        normals = normals.copy()
        normals[bad] = unit(normals[bad])
    return normals


# --------------------------------------------------------------------------
# OBJ


def save_obj(path, cloud: PointCloud) -> None:
    lines = [f"v {_fmt(p)}" for p in cloud.points]
    if cloud.normals is not None:
        lines += [f"vn {_fmt(n)}" for n in cloud.normals]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_obj(path) -> PointCloud:
    """Read ``v``/``vn`` lines; other directives are counted in ``info["skipped"]``.

    Normals are attached only when there is exactly one ``vn`` per ``v``;
    otherwise ``info["normals"]`` records why they were dropped.
    """
    points, normals = [], []
    skipped = Counter()
    with open(path, encoding="ascii", errors="replace") as fh:
        for line_no, raw in enumerate(fh, 1):
            tokens = raw.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            tag = tokens[0]
            if tag == "v":
                points.append(_floats(path, line_no, tokens[1:], 3))
            elif tag == "vn":
                normals.append(_floats(path, line_no, tokens[1:], 3))
            else:
                skipped[tag] += 1
    info = {"skipped": dict(skipped)}
    nrm = None
    if normals and len(normals) == len(points):
        nrm = _clean_normals(np.array(normals))
        info["normals"] = "present"
    elif normals:
        info["normals"] = f"dropped: {len(normals)} vn for {len(points)} v"
    else:
        info["normals"] = "absent"
    return PointCloud(np.array(points).reshape(-1, 3), nrm, info=info)


# --------------------------------------------------------------------------
# PLY (ascii)


def save_ply(path, cloud: PointCloud) -> None:
    cols = [cloud.points]
    props = ["float64 x", "float64 y", "float64 z"]
    if cloud.normals is not None:
        cols.append(cloud.normals)
        props += ["float64 nx", "float64 ny", "float64 nz"]
    for name, values in cloud.extras.items():
        cols.append(np.asarray(values).reshape(-1, 1))
        props.append(f"float64 {name}")
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {p}" for p in props]
    if cloud.patch_ids is not None:
        header.append("property int patch_id")
    header.append("end_header")

    data = np.hstack(cols) if cols else np.zeros((len(cloud), 0))
    rows = []
    for i, row in enumerate(data):
        line = _fmt(row)
        if cloud.patch_ids is not None:
            line += f" {int(cloud.patch_ids[i])}"
        rows.append(line)
    Path(path).write_text("\n".join(header + rows) + "\n", encoding="ascii")


_PLY_FLOAT = {"float", "float32", "float64", "double"}
_PLY_INT = {"char", "uchar", "short", "ushort", "int", "uint", "int8", "uint8",
            "int16", "uint16", "int32", "uint32"}


def load_ply(path) -> PointCloud:
    with open(path, encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic")
    n_vertex = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    body = None
    for line_no, raw in enumerate(lines[1:], 2):
        tokens = raw.split()
        if not tokens or tokens[0] == "comment" or tokens[0] == "obj_info":
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ParseError(path, line_no, f"unsupported PLY format {' '.join(tokens[1:])!r}")
        elif tokens[0] == "element":
            in_vertex = len(tokens) == 3 and tokens[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tokens[2])
                except ValueError:
                    raise ParseError(path, line_no, "bad vertex count") from None
            elif n_vertex is None:
                raise ParseError(path, line_no, "vertex element must come first")
        elif tokens[0] == "property":
            if in_vertex:
                if len(tokens) != 3 or tokens[1] == "list":
                    raise ParseError(path, line_no, "unsupported vertex property")
                props.append((tokens[1], tokens[2]))
        elif tokens[0] == "end_header":
            body = line_no
            break
        else:
            raise ParseError(path, line_no, f"unexpected header line {raw.strip()!r}")
    if body is None or n_vertex is None:
        raise ParseError(path, len(lines), "incomplete PLY header")

    names = [name for _, name in props]
    for axis in "xyz":
        if axis not in names:
            raise ParseError(path, body, f"missing vertex property {axis!r}")
    table = np.empty((n_vertex, len(props)))
    for i in range(n_vertex):
        line_no = body + 1 + i
        if line_no - 1 >= len(lines):
            raise ParseError(path, line_no, f"expected {n_vertex} vertices, file ended after {i}")
        tokens = lines[line_no - 1].split()
        if len(tokens) != len(props):
            raise ParseError(path, line_no, f"expected {len(props)} values, got {len(tokens)}")
        try:
            table[i] = [float(t) for t in tokens]
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from None

    col = {name: table[:, j] for j, name in enumerate(names)}
    points = np.stack([col["x"], col["y"], col["z"]], axis=1)
    normals = None
    if all(k in col for k in ("nx", "ny", "nz")):
        normals = _clean_normals(np.stack([col["nx"], col["ny"], col["nz"]], axis=1))
    patch_ids = col["patch_id"].astype(np.int64) if "patch_id" in col else None
    reserved = {"x", "y", "z", "nx", "ny", "nz", "patch_id"}
    extras = {name: col[name] for (kind, name) in props
              if name not in reserved and (kind in _PLY_FLOAT or kind in _PLY_INT)}
    info = {"normals": "present" if normals is not None else "absent"}
    return PointCloud(points, normals, patch_ids, extras, info)


def load_cloud(path) -> PointCloud:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return load_ply(path)
    if suffix == ".obj":
        return load_obj(path)
    raise ValueError(f"unsupported point-cloud format {suffix!r} (use .ply or .obj)")


def save_cloud(path, cloud: PointCloud) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        save_ply(path, cloud)
    elif suffix == ".obj":
        save_obj(path, cloud)
    else:
        raise ValueError(f"unsupported point-cloud format {suffix!r} (use .ply or .obj)")


# --------------------------------------------------------------------------
# area sidecar


def write_area(path, area: float) -> None:
    Path(path).write_text(repr(float(area)) + "\n", encoding="ascii")


def read_area(path) -> float:
    text = Path(path).read_text(encoding="ascii").split()
    if len(text) != 1:
        raise ParseError(path, 1, "area sidecar must hold exactly one number")
    try:
        value = float(text[0])
    except ValueError:
        raise ParseError(path, 1, f"not a number: {text[0]!r}") from None
    if not value > 0:
        raise ParseError(path, 1, "area must be positive")
    return value
