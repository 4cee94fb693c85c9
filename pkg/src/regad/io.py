"""Readers and writers for clouds, transforms, feature matrices and memory banks.

Binary layouts (all little-endian):

* features: ``b"R2IFEAT1"``, u32 rows, u32 dim, u8 level code, 3 pad bytes,
  then rows*dim f32 values in row-major order.
* bank: ``b"R2IBANK1"``, u32 m, u32 fused_dim, f32 gamma_f, f32 gamma_c,
  then m*fused_dim f32 values.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import FeatureFormatError, RegadError
from .geometry import PointCloud, RigidTransform

FEATURE_MAGIC = b"R2IFEAT1"
BANK_MAGIC = b"R2IBANK1"
LEVELS = ("local", "point", "patch")

_FEAT_HEADER = struct.Struct("<8sIIB3x")
_BANK_HEADER = struct.Struct("<8sIIff")


# ---------------------------------------------------------------- point clouds

def read_xyz(path) -> PointCloud:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise RegadError(f"{path}:{lineno}: expected 3 or 4 columns")
            rows.append([float(p) for p in parts])
    if not rows:
        return PointCloud(np.zeros((0, 3)))
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise RegadError(f"{path}: mixed column counts")
    arr = np.array(rows)
    labels = arr[:, 3].astype(np.int64) if arr.shape[1] == 4 else None
    return PointCloud(arr[:, :3], labels)


def write_xyz(path, cloud: PointCloud):
    # repr of Python floats round-trips exactly
    rows = cloud.points.tolist()
    with open(path, "w") as fh:
        if cloud.labels is None:
            for x, y, z in rows:
                fh.write(f"{x!r} {y!r} {z!r}\n")
        else:
            for (x, y, z), lab in zip(rows, cloud.labels.tolist()):
                fh.write(f"{x!r} {y!r} {z!r} {lab}\n")


def read_ply(path) -> PointCloud:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise RegadError(f"{path}: not a PLY file")
    n_vertex = None
    props = []
    in_vertex = False
    body_start = None
    for i, line in enumerate(lines[1:], 1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise RegadError(f"{path}: only ASCII PLY is supported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = i + 1
            break
    if n_vertex is None or body_start is None:
        raise RegadError(f"{path}: malformed PLY header")
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise RegadError(f"{path}: PLY lacks x/y/z properties") from None
    body = lines[body_start:body_start + n_vertex]
    if len(body) < n_vertex:
        raise RegadError(f"{path}: unexpected end of data")
    data = np.array([[float(v) for v in row.split()] for row in body]).reshape(n_vertex, len(props))
    labels = data[:, props.index("label")].astype(np.int64) if "label" in props else None
    return PointCloud(data[:, cols], labels)


def write_ply(path, cloud: PointCloud, colors=None):
    """ASCII PLY; ``colors`` is an optional (n, 3) uint8 array."""
    n = len(cloud)
    header = ["ply", "format ascii 1.0", f"element vertex {n}",
              "property double x", "property double y", "property double z"]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if cloud.labels is not None:
        header.append("property int label")
    header.append("end_header")
    with open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        for i in range(n):
            p = cloud.points[i]
            row = [repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))]
            if colors is not None:
                row += [str(int(c)) for c in colors[i]]
            if cloud.labels is not None:
                row.append(str(int(cloud.labels[i])))
            fh.write(" ".join(row) + "\n")


def read_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    return read_xyz(path)


def write_cloud(path, cloud: PointCloud):
    path = Path(path)
    if path.suffix.lower() == ".ply":
        write_ply(path, cloud)
    else:
        write_xyz(path, cloud)


# ------------------------------------------------------------------ transforms

def write_transform(path, t: RigidTransform):
    m = t.matrix()
    with open(path, "w") as fh:
        for row in m:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_transform(path) -> RigidTransform:
    m = np.loadtxt(path, ndmin=2)
    return RigidTransform.from_matrix(m)


# -------------------------------------------------------------------- features

def _level_code(level):
    if isinstance(level, (int, np.integer)):
        if not 0 <= level < len(LEVELS):
            raise FeatureFormatError(f"unknown feature level code {level}")
        return int(level)
    if level not in LEVELS:
        raise FeatureFormatError(f"unknown feature level {level!r}")
    return LEVELS.index(level)


def write_features(path, data, level="local"):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise FeatureFormatError("feature matrix must be 2-D")
    code = _level_code(level)
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w") as fh:
            fh.write("rows,dim,level\n")
            fh.write(f"{data.shape[0]},{data.shape[1]},{LEVELS[code]}\n")
            for row in data:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        return
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(FEATURE_MAGIC, data.shape[0], data.shape[1], code))
        fh.write(data.astype("<f4").tobytes())


def _read_features_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise FeatureFormatError("unexpected end of data")
    head = lines.pop(0).split(",")
    if [h.strip() for h in head] == ["rows", "dim", "level"]:
        if not lines:
            raise FeatureFormatError("unexpected end of data")
        head = lines.pop(0).split(",")
    try:
        rows, dim = int(head[0]), int(head[1])
        lev = head[2].strip()
        level = LEVELS[_level_code(int(lev))] if lev.isdigit() else LEVELS[_level_code(lev)]
    except (ValueError, IndexError):
        raise FeatureFormatError("bad CSV header") from None
    if len(lines) < rows:
        raise FeatureFormatError("unexpected end of data")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[:rows]], dtype=np.float64)
    except ValueError:
        raise FeatureFormatError("unparsable feature value") from None
    if data.size == 0:
        data = data.reshape(rows, dim)
    if data.shape != (rows, dim):
        raise FeatureFormatError("ragged feature rows")
    return data, level


def read_features(path):
    """Return ``(data, level)`` from a binary or CSV feature file."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        data, level = _read_features_csv(path)
    else:
        raw = path.read_bytes()
        if len(raw) < 8 or raw[:8] != FEATURE_MAGIC:
            if len(raw) < 8:
                raise FeatureFormatError("unexpected end of data")
            raise FeatureFormatError("bad magic")
        if len(raw) < _FEAT_HEADER.size:
            raise FeatureFormatError("unexpected end of data")
        _, rows, dim, code = _FEAT_HEADER.unpack_from(raw)
        level = LEVELS[_level_code(code)]
        need = rows * dim * 4
        body = raw[_FEAT_HEADER.size:]
        if len(body) < need:
            raise FeatureFormatError("unexpected end of data")
        data = np.frombuffer(body[:need], dtype="<f4").astype(np.float64).reshape(rows, dim)
    if not np.all(np.isfinite(data)):
        raise FeatureFormatError("non-finite feature value")
    return data, level


# ------------------------------------------------------------------------ bank

def write_bank(path, entries, gamma_f, gamma_c):
    entries = np.asarray(entries, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_BANK_HEADER.pack(BANK_MAGIC, entries.shape[0], entries.shape[1], gamma_f, gamma_c))
        fh.write(entries.astype("<f4").tobytes())


def read_bank(path):
    """Return ``(entries, gamma_f, gamma_c)``."""
    raw = Path(path).read_bytes()
    if len(raw) >= 8 and raw[:8] != BANK_MAGIC:
        raise FeatureFormatError("bad magic")
    if len(raw) < _BANK_HEADER.size:
        raise FeatureFormatError("unexpected end of data")
    _, m, dim, gf, gc = _BANK_HEADER.unpack_from(raw)
    need = m * dim * 4
    body = raw[_BANK_HEADER.size:]
    if len(body) < need:
        raise FeatureFormatError("unexpected end of data")
    entries = np.frombuffer(body[:need], dtype="<f4").astype(np.float64).reshape(m, dim)
    if not (np.all(np.isfinite(entries)) and np.isfinite(gf) and np.isfinite(gc)):
        raise FeatureFormatError("non-finite bank value")
    return entries, float(gf), float(gc)


def dump_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n")
