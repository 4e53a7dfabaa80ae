"""Point-cloud and scene files.

PLY files are binary little-endian with float64 x/y/z. CSV files hold one
``x,y,z`` row per point. Both carry the generating seed in a header comment.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .sim import Scene, scene_from_dict, scene_to_dict


class CloudFormatError(ValueError):
    pass


_PLY_TYPES = {"double": "<f8", "float64": "<f8", "float": "<f4", "float32": "<f4"}


def write_ply(path, cloud, seed=None) -> Path:
    pts = np.ascontiguousarray(np.asarray(cloud, dtype="<f8").reshape(-1, 3))
    header = ["ply", "format binary_little_endian 1.0", f"comment seed {seed}",
              f"element vertex {pts.shape[0]}",
              "property double x", "property double y", "property double z", "end_header"]
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(pts.tobytes())
    return path


def read_ply(path) -> tuple[np.ndarray, Optional[str]]:
    """Return ``(cloud, seed)``; seed is the header comment value or ``None``."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise CloudFormatError(f"{path}: not a PLY file")
    lines = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]
    seed, n, props, fmt = None, None, [], None
    for line in lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "comment" and len(parts) >= 3 and parts[1] == "seed":
            seed = parts[2]
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise CloudFormatError(f"{path}: unsupported element {parts[1]!r}")
            n = int(parts[2])
        elif parts[0] == "property":
            if parts[1] not in _PLY_TYPES:
                raise CloudFormatError(f"{path}: unsupported property type {parts[1]!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt != "binary_little_endian" or n is None:
        raise CloudFormatError(f"{path}: expected a binary little-endian vertex list")
    names = [p[0] for p in props]
    if not {"x", "y", "z"} <= set(names):
        raise CloudFormatError(f"{path}: missing x/y/z properties")
    dtype = np.dtype(props)
    if len(body) < n * dtype.itemsize:
        raise CloudFormatError(f"{path}: truncated vertex data")
    rec = np.frombuffer(body, dtype=dtype, count=n)
    cloud = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(float)
    return cloud, (None if seed in (None, "None") else seed)


def write_csv(path, cloud, seed=None) -> Path:
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(f"# seed: {seed}\n")
        fh.write("x,y,z\n")
        for x, y, z in pts.tolist():
            fh.write(f"{x!r},{y!r},{z!r}\n")
    return path


def read_csv(path) -> tuple[np.ndarray, Optional[str]]:
    seed = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                if key.strip() == "seed":
                    seed = val.strip()
                continue
            if line.replace(" ", "") == "x,y,z":
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise CloudFormatError(f"{path}: bad row {line!r}") from exc
            if len(rows[-1]) != 3:
                raise CloudFormatError(f"{path}: expected 3 columns, got {len(rows[-1])}")
    cloud = np.asarray(rows, dtype=float).reshape(-1, 3)
    return cloud, (None if seed in (None, "None") else seed)


def read_cloud(path) -> tuple[np.ndarray, Optional[str]]:
    """Dispatch on the file extension (``.ply`` or ``.csv``)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".csv":
        return read_csv(path)
    raise CloudFormatError(f"{path}: unknown point-cloud extension {suffix!r}")


def write_cloud(path, cloud, seed=None) -> Path:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return write_ply(path, cloud, seed)
    if suffix == ".csv":
        return write_csv(path, cloud, seed)
    raise CloudFormatError(f"{path}: unknown point-cloud extension {suffix!r}")


def write_scene(path, scene: Scene, seed=None) -> Path:
    d = {"seed": seed, **scene_to_dict(scene)}
    path = Path(path)
    path.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    return path


def read_scene(path) -> tuple[Scene, Optional[int]]:
    d = json.loads(Path(path).read_text())
    return scene_from_dict(d), d.get("seed")
