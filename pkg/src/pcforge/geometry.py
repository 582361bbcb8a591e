"""Core 3D types, mesh surface sampling, and cloud normalizations.

Point clouds are plain ``(N, 3)`` float64 arrays throughout the package;
point order is meaningful (point i keeps its identity across diffusion
steps), so nothing here reorders rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def as_cloud(points) -> np.ndarray:
    """Coerce to an (N, 3) float64 cloud, validating shape and finiteness."""
    pc = np.asarray(points, dtype=np.float64)
    if pc.ndim != 2 or pc.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {pc.shape}")
    if pc.shape[0] < 1:
        raise ValueError("point cloud must contain at least one point")
    if not np.all(np.isfinite(pc)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pc


@dataclass
class TriangleMesh:
    """Vertices plus triangular faces (integer vertex indices)."""

    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray     # (F, 3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("mesh vertices must have shape (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("mesh faces must have shape (F, 3)")
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")
        if self.faces.size and self.faces.min() < 0:
            raise ValueError("negative face index")

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())


@dataclass
class UnitSphereTransform:
    """Centering + scaling that maps a source cloud onto the unit sphere.

    ``apply`` sends original coordinates to normalized ones; ``invert``
    reverses it.
    """

    center: np.ndarray  # (3,)
    scale: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def apply(self, pc: np.ndarray) -> np.ndarray:
        return (np.asarray(pc, dtype=np.float64) - self.center) / self.scale

    def invert(self, pc: np.ndarray) -> np.ndarray:
        return np.asarray(pc, dtype=np.float64) * self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "UnitSphereTransform":
        return cls(np.asarray(d["center"], dtype=np.float64), float(d["scale"]))


def sample_mesh(mesh: TriangleMesh, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` points uniformly from the mesh surface, area-weighted.

    Faces are selected by inverse-CDF lookup over cumulative areas
    (zero-area faces get zero probability) and points are placed with the
    square-root barycentric trick, which is uniform on each triangle.
    Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError("need n >= 1 sample points")
    areas = mesh.face_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("degenerate mesh: total surface area is zero")
    rng = np.random.default_rng(seed)

    cum = np.cumsum(areas)
    r = rng.random(n) * total
    face_idx = np.searchsorted(cum, r, side="right")
    face_idx = np.minimum(face_idx, len(areas) - 1)

    tri = mesh.vertices[mesh.faces[face_idx]]  # (n, 3, 3)
    u = rng.random(n)
    v = rng.random(n)
    su = np.sqrt(u)
    w0 = 1.0 - su
    w1 = su * (1.0 - v)
    w2 = su * v
    pts = (tri[:, 0] * w0[:, None] + tri[:, 1] * w1[:, None]
           + tri[:, 2] * w2[:, None])
    return pts


def normalize_unit_sphere(pc: np.ndarray) -> tuple[np.ndarray, UnitSphereTransform]:
    """Center the cloud on its centroid and scale the farthest point to norm 1."""
    pc = as_cloud(pc)
    center = pc.mean(axis=0)
    shifted = pc - center
    scale = float(np.linalg.norm(shifted, axis=1).max())
    if scale == 0.0:
        raise ValueError("cannot normalize: all points identical (zero scale)")
    return shifted / scale, UnitSphereTransform(center, scale)


def center_cloud(pc: np.ndarray) -> np.ndarray:
    """Shift the cloud so its per-coordinate mean is zero."""
    pc = as_cloud(pc)
    return pc - pc.mean(axis=0)


def point_to_mesh_distance(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Exact distance from each point to the nearest mesh triangle.

    Used as a surface-containment check for sampled clouds; O(N * F), fine
    at test scale.
    """
    pts = as_cloud(points)
    best = np.full(len(pts), np.inf)
    for f in mesh.faces:
        a, b, c = mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]
        d = _point_triangle_distance(pts, a, b, c)
        np.minimum(best, d, out=best)
    return best


def _point_triangle_distance(p: np.ndarray, a, b, c) -> np.ndarray:
    # Ericson, Real-Time Collision Detection, closest-point-on-triangle,
    # vectorized over query points.
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ap @ ab
    d2 = ap @ ac
    bp = p - b
    d3 = bp @ ab
    d4 = bp @ ac
    cp = p - c
    d5 = cp @ ab
    d6 = cp @ ac

    closest = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    m = (d1 <= 0) & (d2 <= 0)
    closest[m] = a
    done |= m

    m = (~done) & (d3 >= 0) & (d4 <= d3)
    closest[m] = b
    done |= m

    vc = d1 * d4 - d3 * d2
    m = (~done) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    denom = np.where(d1 - d3 != 0, d1 - d3, 1.0)
    t = d1 / denom
    closest[m] = a + t[m, None] * ab
    done |= m

    m = (~done) & (d6 >= 0) & (d5 <= d6)
    closest[m] = c
    done |= m

    vb = d5 * d2 - d1 * d6
    m = (~done) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    denom = np.where(d2 - d6 != 0, d2 - d6, 1.0)
    t = d2 / denom
    closest[m] = a + t[m, None] * ac
    done |= m

    va = d3 * d6 - d5 * d4
    m = (~done) & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    denom = (d4 - d3) + (d5 - d6)
    denom = np.where(denom != 0, denom, 1.0)
    t = (d4 - d3) / denom
    closest[m] = b + t[m, None] * (c - b)
    done |= m

    m = ~done
    denom = va + vb + vc
    denom = np.where(denom != 0, denom, 1.0)
    v = (vb / denom)[m, None]
    w = (vc / denom)[m, None]
    closest[m] = a + ab * v + ac * w

    return np.linalg.norm(p - closest, axis=1)
