"""Readers and writers for the on-disk artifacts.

* PFM (``Pf`` grayscale) for depth and disparity maps: 32-bit floats, rows
  stored bottom to top, the sign of the scale field giving the byte order
  (negative = little-endian). Invalid pixels are written as NaN.
* PLY for clouds and flow: a ``vertex`` element with ``x y z`` and optional
  ``u v``, ``flow_x flow_y flow_z`` and extra per-point scalars, in ASCII or
  binary little-endian (the default).
* JSON for configs and reports, validated against strict pydantic models.
"""

from __future__ import annotations

import json
import os
import re
import sys
from dataclasses import dataclass, field
from typing import Type, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from .camera import CameraIntrinsics, DepthMap, DisparityMap
from .cloud import PointCloud
from .errors import ParseError, SchemaError, ShapeError

__all__ = [
    "PlyData",
    "encode_pfm",
    "decode_pfm",
    "read_pfm",
    "write_pfm",
    "encode_ply",
    "decode_ply",
    "read_ply",
    "write_ply",
    "read_config",
    "parse_config",
    "read_intrinsics",
    "write_report",
    "dumps_report",
]

M = TypeVar("M", bound=BaseModel)


# -------------------------------------------------------------------- PFM


def encode_pfm(grid, little_endian: bool = True) -> bytes:
    """Serialise a :class:`DepthMap`/:class:`DisparityMap` (or 2-D array) as PFM."""
    if isinstance(grid, (DepthMap, DisparityMap)):
        values = np.where(grid.valid, grid.values, np.nan)
    else:
        values = np.asarray(grid, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError(f"PFM holds a 2-D grid, got shape {values.shape}")
    h, w = values.shape
    dtype = "<f4" if little_endian else ">f4"
    scale = "-1.0" if little_endian else "1.0"
    header = f"Pf\n{w} {h}\n{scale}\n".encode("ascii")
    return header + np.ascontiguousarray(values[::-1], dtype=dtype).tobytes()


_TOKEN = re.compile(rb"\S+")


def _header_tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens and the payload offset."""
    tokens = []
    pos = 0
    for _ in range(count):
        m = _TOKEN.search(data, pos)
        if m is None:
            raise ParseError("truncated PFM header", len(data))
        tokens.append((m.group(), m.start()))
        pos = m.end()
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ParseError("PFM header must end with a single whitespace byte", pos)
    return tokens, pos + 1


def decode_pfm(data: bytes, kind: str = "depth"):
    """Parse PFM bytes into a :class:`DepthMap` (or :class:`DisparityMap` for ``kind="disparity"``).

    Non-finite and non-positive samples are marked invalid.
    """
    cls = {"depth": DepthMap, "disparity": DisparityMap}[kind]
    tokens, offset = _header_tokens(data, 4)
    (magic, _), (w_tok, w_at), (h_tok, h_at), (s_tok, s_at) = tokens
    if magic == b"PF":
        raise ParseError("colour PFM is not supported, expected 'Pf'", 0)
    if magic != b"Pf":
        raise ParseError(f"bad PFM magic {magic[:8]!r}", 0)
    try:
        w = int(w_tok)
    except ValueError:
        raise ParseError(f"bad PFM width {w_tok[:16]!r}", w_at) from None
    try:
        h = int(h_tok)
    except ValueError:
        raise ParseError(f"bad PFM height {h_tok[:16]!r}", h_at) from None
    if w < 0 or h < 0:
        raise ParseError("negative PFM dimensions", w_at if w < 0 else h_at)
    try:
        scale = float(s_tok)
    except ValueError:
        raise ParseError(f"bad PFM scale {s_tok[:16]!r}", s_at) from None
    if scale == 0 or not np.isfinite(scale):
        raise ParseError("PFM scale must be finite and non-zero", s_at)
    need = 4 * w * h
    have = len(data) - offset
    if have < need:
        raise ParseError(f"truncated PFM payload: {have} of {need} bytes", len(data))
    if have > need:
        raise ParseError(f"{have - need} trailing bytes after PFM payload", offset + need)
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset).reshape(h, w)[::-1]
    return cls.from_array(values.astype(np.float64))


def write_pfm(path, grid, little_endian: bool = True) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pfm(grid, little_endian))


def read_pfm(path, kind: str = "depth"):
    with open(path, "rb") as fh:
        return decode_pfm(fh.read(), kind)


# -------------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_XYZ = ("x", "y", "z")
_UV = ("u", "v")
_FLOW = ("flow_x", "flow_y", "flow_z")


@dataclass
class PlyData:
    """Contents of a vertex PLY: the cloud, optional flow and any other per-point scalars."""

    cloud: PointCloud
    flow: np.ndarray | None = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)


def encode_ply(cloud: PointCloud, flow=None, extra: dict | None = None, binary: bool = True) -> bytes:
    """Serialise a cloud as PLY. All properties are written as doubles, so reading back is lossless."""
    n = len(cloud)
    cols = {name: cloud.points[:, i] for i, name in enumerate(_XYZ)}
    if cloud.source_pixels is not None:
        cols.update(u=cloud.source_pixels[:, 0], v=cloud.source_pixels[:, 1])
    if flow is not None:
        flow = np.asarray(flow, dtype=np.float64).reshape(-1, 3)
        if len(flow) != n:
            raise ShapeError(f"{len(flow)} flow vectors for {n} points")
        cols.update(zip(_FLOW, flow.T))
    for name, col in (extra or {}).items():
        if name in cols or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise SchemaError(f"invalid or duplicate property name {name!r}")
        col = np.asarray(col, dtype=np.float64).reshape(-1)
        if len(col) != n:
            raise ShapeError(f"property {name!r} has {len(col)} values for {n} points")
        cols[name] = col
    table = np.column_stack([np.asarray(c, dtype=np.float64) for c in cols.values()]) if n else np.zeros((0, len(cols)))

    fmt = "binary_little_endian" if binary else "ascii"
    lines = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    lines += [f"property double {name}" for name in cols]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    if binary:
        return header + table.astype("<f8").tobytes()
    body = "".join(" ".join(map(repr, row)) + "\n" for row in table.tolist())
    return header + body.encode("ascii")


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or 'end_header')", 0)
    nl = data.find(b"\n", end)
    if nl < 0:
        raise ParseError("unterminated PLY header", len(data))
    body = nl + 1
    fmt = None
    elements: list[tuple[str, int, list]] = []
    pos = 0
    for raw in data[:end].split(b"\n"):
        line = raw.strip().decode("ascii", "replace")
        at = pos
        pos += len(raw) + 1
        words = line.split()
        if not words or words[0] in ("ply", "comment", "obj_info"):
            continue
        if words[0] == "format":
            if len(words) < 2 or words[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(f"unsupported PLY format line {line!r}", at)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise ParseError(f"bad element line {line!r}", at)
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise ParseError("property declared before any element", at)
            if len(words) == 3 and words[1] in _PLY_TYPES:
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
            elif len(words) == 5 and words[1] == "list":
                elements[-1][2].append((words[4], None))
            else:
                raise ParseError(f"bad property line {line!r}", at)
        else:
            raise ParseError(f"unexpected PLY header line {line!r}", at)
    if fmt is None:
        raise ParseError("PLY header has no format line", 0)
    return fmt, elements, body


def decode_ply(data: bytes) -> PlyData:
    """Parse the vertex element of a PLY file (ASCII or binary)."""
    fmt, elements, body = _parse_ply_header(data)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise SchemaError("PLY has no 'vertex' element")
    vi = names.index("vertex")
    for name, _, props in elements[: vi + 1]:
        if any(t is None for _, t in props):
            raise ParseError(f"list properties in element {name!r} are not supported", body)
    _, n, props = elements[vi]
    prop_names = [p for p, _ in props]
    missing = [p for p in _XYZ if p not in prop_names]
    if missing:
        raise SchemaError(f"vertex element lacks {missing}; expected properties x, y, z "
                          "[, u, v] [, flow_x, flow_y, flow_z]")

    if fmt == "ascii":
        text = data[body:].decode("ascii", "replace").split("\n")
        skip = sum(c for _, c, _ in elements[:vi])
        rows = [ln.split() for ln in text[skip : skip + n]]
        if len(rows) < n:
            raise ParseError(f"truncated PLY body: {len(rows)} of {n} vertex rows", len(data))
        try:
            table = np.array(rows, dtype=np.float64).reshape(n, len(props))
        except ValueError:
            raise ParseError("malformed ASCII vertex row", body) from None
        columns = {p: table[:, i] for i, p in enumerate(prop_names)}
    else:
        order = "<" if fmt == "binary_little_endian" else ">"
        offset = body
        for _, count, eprops in elements[:vi]:
            offset += count * sum(np.dtype(t).itemsize for _, t in eprops)
        dtype = np.dtype([(p, order + t) for p, t in props])
        need = n * dtype.itemsize
        if len(data) - offset < need:
            raise ParseError(f"truncated PLY payload: {max(len(data) - offset, 0)} of {need} vertex bytes", len(data))
        rec = np.frombuffer(data, dtype=dtype, count=n, offset=offset)
        columns = {p: rec[p].astype(np.float64) for p in prop_names}

    def group(keys):
        present = [k for k in keys if k in columns]
        if present and len(present) != len(keys):
            raise SchemaError(f"vertex element has {present} but not all of {list(keys)}")
        return np.column_stack([columns[k] for k in keys]) if present else None

    xyz = group(_XYZ)
    uv = group(_UV)
    flow = group(_FLOW)
    extra = {p: columns[p] for p in prop_names if p not in _XYZ + _UV + _FLOW}
    return PlyData(PointCloud(xyz.reshape(-1, 3), None if uv is None else uv.reshape(-1, 2)),
                   None if flow is None else flow.reshape(-1, 3), extra)


def write_ply(path, cloud: PointCloud, flow=None, extra: dict | None = None, binary: bool = True) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ply(cloud, flow, extra, binary))


def read_ply(path) -> PlyData:
    with open(path, "rb") as fh:
        return decode_ply(fh.read())


# ------------------------------------------------------------------- JSON


def _json_path(loc) -> str:
    out = "$"
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def _schema_error(exc: ValidationError) -> SchemaError:
    err = exc.errors()[0]
    loc = tuple(err["loc"])
    if err["type"] == "extra_forbidden":
        return SchemaError(f"unknown key {loc[-1]!r}", _json_path(loc))
    # model-level validators report an empty location
    return SchemaError(err["msg"], _json_path(loc))


def parse_config(text: str | bytes, model: Type[M]) -> M:
    """Validate a JSON document against ``model``; omitted keys take their defaults."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.pos) from None
    if not isinstance(doc, dict):
        raise SchemaError("expected a JSON object", "$")
    try:
        return model.model_validate(doc)
    except ValidationError as exc:
        raise _schema_error(exc) from None


def read_config(path, model: Type[M]) -> M:
    with open(path, "rb") as fh:
        return parse_config(fh.read(), model)


def read_intrinsics(path) -> CameraIntrinsics:
    """Intrinsics from a bare JSON object or from the ``intrinsics`` key of a larger document."""
    with open(path, "rb") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.pos) from None
    if isinstance(doc, dict) and isinstance(doc.get("intrinsics"), dict):
        try:
            return CameraIntrinsics.model_validate(doc["intrinsics"])
        except ValidationError as exc:
            err = _schema_error(exc)
            raise SchemaError(str(err).split(": ", 1)[-1], "$.intrinsics" + (err.path or "$")[1:]) from None
    return parse_config(text, CameraIntrinsics)


def _plain(obj):
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if hasattr(obj, "as_dict"):
        return obj.as_dict()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def dumps_report(obj) -> str:
    """Deterministic JSON text (sorted keys, two-space indent, trailing newline)."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def write_report(path, obj) -> None:
    """Write a model, report, trace or plain dict as JSON; ``path="-"`` writes to stdout."""
    text = dumps_report(obj)
    if os.fspath(path) == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
