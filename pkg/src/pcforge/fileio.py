"""File formats: PLY clouds, OBJ meshes, PGM images, and raw float grids
with JSON sidecar headers.

Writers are deterministic byte-for-byte for identical inputs; nothing here
embeds timestamps or machine-specific state.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, as_cloud


# ---------------------------------------------------------------------------
# PLY point clouds
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


def write_ply(path, pc: np.ndarray, binary: bool = True) -> None:
    """Write an (N, 3) cloud as PLY, double precision, binary LE by default."""
    pc = as_cloud(pc)
    path = Path(path)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {len(pc)}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(pc, dtype="<f8").tobytes())
        else:
            for x, y, z in pc:
                f.write(f"{x:.17g} {y:.17g} {z:.17g}\n".encode("ascii"))


def read_ply(path) -> np.ndarray:
    """Read x/y/z vertex coordinates from an ASCII or binary-LE PLY file.

    Extra vertex properties are skipped; non-vertex elements (faces etc.)
    are ignored.
    """
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()

    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]

    fmt = None
    elements = []  # (name, count, [(prop_name, dtype_str), ...])
    for line in header_lines[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ValueError(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[-1], ("list", tok[2], tok[3])))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise ValueError(f"{path}: unsupported property type {tok[1]}")
                elements[-1][2].append((tok[-1], _PLY_TYPES[tok[1]]))

    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"{path}: unsupported PLY format {fmt!r}")

    vertex_el = next((e for e in elements if e[0] == "vertex"), None)
    if vertex_el is None:
        raise ValueError(f"{path}: no vertex element")
    if elements and elements[0][0] != "vertex":
        raise ValueError(f"{path}: vertex must be the first element")
    _, count, props = vertex_el
    names = [p[0] for p in props]
    for want in ("x", "y", "z"):
        if want not in names:
            raise ValueError(f"{path}: vertex element lacks property {want!r}")
    if any(isinstance(p[1], tuple) for p in props):
        raise ValueError(f"{path}: list-typed vertex properties unsupported")

    if fmt == "ascii":
        rows = []
        lines = body.decode("ascii").splitlines()
        if len(lines) < count:
            raise ValueError(f"{path}: truncated vertex data")
        for line in lines[:count]:
            vals = line.split()
            if len(vals) < len(props):
                raise ValueError(f"{path}: short vertex row")
            rows.append([float(vals[names.index(c)]) for c in ("x", "y", "z")])
        return np.asarray(rows, dtype=np.float64).reshape(count, 3)

    dt = np.dtype([(n, t) for n, t in props])
    need = dt.itemsize * count
    if len(body) < need:
        raise ValueError(f"{path}: truncated vertex data")
    rec = np.frombuffer(body[:need], dtype=dt)
    return np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)


# ---------------------------------------------------------------------------
# OBJ meshes
# ---------------------------------------------------------------------------

def read_obj(path) -> TriangleMesh:
    """Read v/f records from an OBJ file, fan-triangulating polygonal faces."""
    path = Path(path)
    verts: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise ValueError(f"{path}:{ln}: vertex needs 3 coordinates")
                verts.append([float(tok[1]), float(tok[2]), float(tok[3])])
            elif tok[0] == "f":
                if len(tok) < 4:
                    raise ValueError(f"{path}:{ln}: face needs >= 3 vertices")
                idx = []
                for t in tok[1:]:
                    s = t.split("/")[0]
                    i = int(s)
                    # OBJ indices are 1-based; negative counts from the end.
                    i = i - 1 if i > 0 else len(verts) + i
                    if i < 0 or i >= len(verts):
                        raise ValueError(f"{path}:{ln}: face index out of range")
                    idx.append(i)
                for k in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
    if not verts:
        raise ValueError(f"{path}: no vertices")
    return TriangleMesh(np.asarray(verts, dtype=np.float64),
                        np.asarray(tris, dtype=np.int64).reshape(-1, 3))


def write_obj(path, mesh: TriangleMesh) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for face in mesh.faces:
            f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")


# ---------------------------------------------------------------------------
# PGM images
# ---------------------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    """Write an 8-bit binary (P5) PGM.

    Binary {0,1} masks are scaled to {0,255}; float images in [0,1] are
    quantized; uint8 data is written as-is.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM output expects a 2D image")
    if img.dtype == np.uint8:
        data = img
    elif np.issubdtype(img.dtype, np.integer):
        mx = int(img.max(initial=0))
        data = (img.astype(np.float64) * (255 if mx <= 1 else 1)).clip(0, 255).astype(np.uint8)
    else:
        data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 or P2 PGM into a uint8 array."""
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    i = 0
    # Tokenize the header, skipping '#' comments.
    while len(tokens) < 4 and i < len(data):
        if data[i:i + 1].isspace():
            i += 1
        elif data[i:i + 1] == b"#":
            j = data.find(b"\n", i)
            i = len(data) if j < 0 else j + 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 4 or tokens[0] not in (b"P5", b"P2"):
        raise ValueError(f"{path}: not an 8-bit PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM unsupported")
    if tokens[0] == b"P5":
        i += 1  # single whitespace byte after maxval
        pix = np.frombuffer(data[i:i + w * h], dtype=np.uint8)
    else:
        pix = np.array(data[i:].split()[:w * h], dtype=np.uint8)
    if pix.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return pix.reshape(h, w).copy()


def read_mask_pgm(path) -> np.ndarray:
    """Read a PGM and binarize it (any nonzero pixel becomes 1)."""
    return (read_pgm(path) != 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# Raw float grids with JSON sidecars
# ---------------------------------------------------------------------------

_RAW_DTYPES = {"float32": "<f4", "float64": "<f8"}


def write_raw_grid(path, grid: np.ndarray, dtype: str = "float32") -> None:
    """Write a (H, W) or (H, W, C) grid as raw little-endian floats plus a
    `<path>.json` sidecar recording {height, width, channels, dtype}."""
    if dtype not in _RAW_DTYPES:
        raise ValueError(f"unsupported raw dtype {dtype!r}")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        h, w = grid.shape
        c = 1
    elif grid.ndim == 3:
        h, w, c = grid.shape
    else:
        raise ValueError("raw grid must be 2D or 3D")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(grid, dtype=_RAW_DTYPES[dtype]).tobytes())
    sidecar = {"height": h, "width": w, "channels": c, "dtype": dtype}
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, sort_keys=True)
        f.write("\n")


def read_raw_grid(path) -> np.ndarray:
    """Read a raw float grid written by :func:`write_raw_grid`.

    Returns (H, W) for single-channel grids, (H, W, C) otherwise, as float64.
    """
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise ValueError(f"{path}: missing JSON sidecar {sidecar_path.name}")
    with open(sidecar_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    h, w, c = int(meta["height"]), int(meta["width"]), int(meta.get("channels", 1))
    dtype = meta.get("dtype", "float32")
    if dtype not in _RAW_DTYPES:
        raise ValueError(f"{path}: unsupported raw dtype {dtype!r}")
    raw = np.fromfile(path, dtype=_RAW_DTYPES[dtype])
    if raw.size != h * w * c:
        raise ValueError(f"{path}: expected {h * w * c} values, found {raw.size}")
    grid = raw.astype(np.float64).reshape(h, w, c)
    return grid[:, :, 0] if c == 1 else grid


def write_json(path, obj) -> None:
    """Canonical JSON dump: sorted keys, trailing newline."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
