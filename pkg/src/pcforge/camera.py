"""Pinhole projection, z-buffered point splatting, and polygon mask rasterization.

Camera convention: camera coordinates c = R @ x + T, the +z axis is the
viewing direction, pixel u grows rightward and v downward, and pixel (row,
col) has its center at integer coordinates (v=row, u=col). With the default
top-down pose T=(0,0,tz) the world +z axis points away from the camera, so
building roofs live on the -z side of their cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import as_cloud

DEFAULT_IMAGE_SIZE = 224
DEFAULT_FOCAL = 224.0


def _identity_rotation() -> np.ndarray:
    return np.eye(3)


@dataclass
class CameraPose:
    """Rigid camera pose: orthonormal rotation (det +1) plus translation."""

    rotation: np.ndarray = field(default_factory=_identity_rotation)
    translation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        rtr = self.rotation.T @ self.rotation
        if not np.allclose(rtr, np.eye(3), atol=1e-9):
            raise ValueError("rotation matrix is not orthonormal")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation matrix must have determinant +1")

    @classmethod
    def top_down(cls, tx: float = 0.0, ty: float = 0.0, tz: float = 1.0) -> "CameraPose":
        """Identity rotation with translation (tx, ty, tz)."""
        return cls(np.eye(3), np.array([tx, ty, tz], dtype=np.float64))


@dataclass
class Intrinsics:
    """Pinhole intrinsics: focal length in pixels, principal point, image size."""

    focal: float = DEFAULT_FOCAL
    cx: float = DEFAULT_IMAGE_SIZE / 2.0
    cy: float = DEFAULT_IMAGE_SIZE / 2.0
    width: int = DEFAULT_IMAGE_SIZE
    height: int = DEFAULT_IMAGE_SIZE

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal length must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def square(cls, size: int, focal: float) -> "Intrinsics":
        """Square image of the given size with a centered principal point."""
        return cls(focal=focal, cx=size / 2.0, cy=size / 2.0,
                   width=size, height=size)

    def to_dict(self) -> dict:
        return {"focal": self.focal, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["focal"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass
class DepthMap:
    """Per-pixel nearest depth and owning point index (-1 where empty)."""

    depth: np.ndarray  # (H, W) float64, +inf where empty
    owner: np.ndarray  # (H, W) int64, -1 where empty


@dataclass
class BoundingBox2D:
    """Inclusive axis-aligned pixel bounding box."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("invalid bounding box extents")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min + 1.0

    @property
    def height(self) -> float:
        return self.y_max - self.y_min + 1.0

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def shifted(self, dx: float, dy: float) -> "BoundingBox2D":
        return BoundingBox2D(self.x_min + dx, self.x_max + dx,
                             self.y_min + dy, self.y_max + dy)


def project_points(pc: np.ndarray, pose: CameraPose, k: Intrinsics):
    """Project cloud points to pixel coordinates, culling points behind the camera.

    Returns ``(indices, pixels, depths)``: input indices of the surviving
    points (in input order), their (u, v) pixel coordinates, and camera-z
    depths. Culled indices are the complement of ``indices``.
    """
    pc = as_cloud(pc)
    cam = pc @ pose.rotation.T + pose.translation
    front = cam[:, 2] > 0
    idx = np.flatnonzero(front)
    cam = cam[front]
    z = cam[:, 2]
    u = k.focal * cam[:, 0] / z + k.cx
    v = k.focal * cam[:, 1] / z + k.cy
    return idx, np.column_stack([u, v]), z


def _round_half_up(a: np.ndarray) -> np.ndarray:
    return np.floor(a + 0.5).astype(np.int64)


def _splat(pc, pose, k, splat_radius):
    """Shared core: z-buffer the cloud, returning the depth/owner grids plus
    per-point rounded pixels for the surviving (in-front) points."""
    if splat_radius < 0:
        raise ValueError("splat radius must be >= 0")
    idx, uv, z = project_points(pc, pose, k)
    h, w = k.height, k.width
    depth = np.full((h, w), np.inf)
    owner = np.full((h, w), -1, dtype=np.int64)

    pu = _round_half_up(uv[:, 0])
    pv = _round_half_up(uv[:, 1])

    r = int(np.floor(splat_radius))
    offsets = [(dx, dy) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]

    cand_px, cand_py, cand_z, cand_i = [], [], [], []
    for dx, dy in offsets:
        x = pu + dx
        y = pv + dy
        ok = (x >= 0) & (x < w) & (y >= 0) & (y < h)
        cand_px.append(x[ok])
        cand_py.append(y[ok])
        cand_z.append(z[ok])
        cand_i.append(idx[ok])
    if cand_px:
        px = np.concatenate(cand_px)
        py = np.concatenate(cand_py)
        cz = np.concatenate(cand_z)
        ci = np.concatenate(cand_i)
        if len(px):
            pix = py * w + px
            # Sort by (pixel, depth, index); first entry per pixel is the
            # nearest point, ties going to the lowest point index.
            order = np.lexsort((ci, cz, pix))
            pix = pix[order]
            first = np.ones(len(pix), dtype=bool)
            first[1:] = pix[1:] != pix[:-1]
            sel = order[first]
            depth.flat[pix[first]] = cz[sel]
            owner.flat[pix[first]] = ci[sel]

    return depth, owner, idx, pu, pv


def rasterize_points(pc: np.ndarray, pose: CameraPose, k: Intrinsics,
                     splat_radius: float = 1.0):
    """Rasterize a cloud into a binary occupancy mask and a depth map.

    Each in-front point marks every pixel within ``splat_radius`` (Chebyshev)
    of its rounded projection; the nearest depth owns each pixel.
    """
    depth, owner, _, _, _ = _splat(pc, pose, k, splat_radius)
    mask = (owner >= 0).astype(np.uint8)
    return mask, DepthMap(depth, owner)


def rasterize_bbox(pc: np.ndarray, pose: CameraPose, k: Intrinsics,
                   splat_radius: float = 1.0):
    """Bounding box of ``rasterize_points``'s mask without building the grid.

    The mask is a union of frame-clipped splat squares, so its bbox follows
    directly from the rounded projections in O(N). Returns None when nothing
    lands inside the frame.
    """
    if splat_radius < 0:
        raise ValueError("splat radius must be >= 0")
    _, uv, _ = project_points(pc, pose, k)
    if len(uv) == 0:
        return None
    r = int(np.floor(splat_radius))
    pu = _round_half_up(uv[:, 0])
    pv = _round_half_up(uv[:, 1])
    hit = ((pu + r >= 0) & (pu - r < k.width)
           & (pv + r >= 0) & (pv - r < k.height))
    if not hit.any():
        return None
    pu = pu[hit]
    pv = pv[hit]
    return BoundingBox2D(float(max(pu.min() - r, 0)),
                         float(min(pu.max() + r, k.width - 1)),
                         float(max(pv.min() - r, 0)),
                         float(min(pv.max() + r, k.height - 1)))


def rasterize_polygon_mask(vertices2d: np.ndarray, faces, width: int, height: int) -> np.ndarray:
    """Fill 2D polygons into a binary mask, even-odd rule at pixel centers.

    ``vertices2d`` is (V, 2) pixel coordinates (u, v); ``faces`` is a list of
    index lists, each with >= 3 vertices. The mask is the union of the filled
    faces; an empty face list yields an all-zero mask.
    """
    verts = np.asarray(vertices2d, dtype=np.float64)
    if verts.size and (verts.ndim != 2 or verts.shape[1] != 2):
        raise ValueError("vertices2d must have shape (V, 2)")
    mask = np.zeros((height, width), dtype=np.uint8)
    for fi, face in enumerate(faces):
        face = np.asarray(face, dtype=np.int64)
        if len(face) < 3:
            raise ValueError(f"face {fi} has fewer than 3 vertices")
        if face.min() < 0 or face.max() >= len(verts):
            raise ValueError(f"face {fi} references an out-of-range vertex")
        mask |= _fill_polygon(verts[face], width, height)
    return mask


def _fill_polygon(poly: np.ndarray, width: int, height: int) -> np.ndarray:
    # Crossing-parity fill over the polygon's pixel bounding box. A pixel
    # center is inside when an odd number of edges cross the rightward ray;
    # the half-open vertical rule (y1 <= y < y2) keeps vertices single-counted.
    x0 = max(int(np.floor(poly[:, 0].min())), 0)
    x1 = min(int(np.ceil(poly[:, 0].max())), width - 1)
    y0 = max(int(np.floor(poly[:, 1].min())), 0)
    y1 = min(int(np.ceil(poly[:, 1].max())), height - 1)
    if x0 > x1 or y0 > y1:
        return np.zeros((height, width), dtype=np.uint8)

    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    X, Y = np.meshgrid(xs, ys)
    inside = np.zeros(X.shape, dtype=bool)

    n = len(poly)
    for i in range(n):
        xa, ya = poly[i]
        xb, yb = poly[(i + 1) % n]
        if ya == yb:
            continue
        spans = ((ya <= Y) & (Y < yb)) | ((yb <= Y) & (Y < ya))
        xcross = xa + (Y - ya) * (xb - xa) / (yb - ya)
        inside ^= spans & (X < xcross)

    mask = np.zeros((height, width), dtype=np.uint8)
    mask[y0:y1 + 1, x0:x1 + 1] = inside.astype(np.uint8)
    return mask


def bbox_of_mask(mask: np.ndarray) -> BoundingBox2D:
    """Tight inclusive bounding box of the set pixels."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise ValueError("empty mask has no bounding box")
    return BoundingBox2D(float(xs.min()), float(xs.max()),
                         float(ys.min()), float(ys.max()))
