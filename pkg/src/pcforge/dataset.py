"""Dataset forging: ingest building geometry, generate the per-building
mask / Sobel map / sampled cloud / recovered camera translation, and manage
the on-disk layout with a JSON-lines manifest.

Disk layout under a dataset root:

    images/<id>.pgm   masks/<id>.pgm   sobel/<id>.raw(+.json)
    clouds/<id>.ply   poses/<id>.json  rejects/...   manifest.jsonl

World convention for synthetic buildings matches the camera module: +z
points into the ground, so roofs face the default top-down camera.
"""

from __future__ import annotations

import hashlib
import json
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .camera import Intrinsics, rasterize_polygon_mask
from .edges import masked_sobel
from .geometry import TriangleMesh, UnitSphereTransform, normalize_unit_sphere, sample_mesh
from .posefit import PoseFitReport, optimize_camera_translation

THREADS_ENV = "PCFORGE_THREADS"
DEFAULT_POINTS = 10000


def worker_count(requested: int | None = None, n_items: int = 1) -> int:
    """Worker cap: explicit request, else PCFORGE_THREADS, else cpu count."""
    if requested is None:
        env = os.environ.get(THREADS_ENV)
        requested = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(requested), max(n_items, 1)))


@dataclass
class BuildingRecord:
    """Source geometry for one building: mesh plus 2D roof polygons."""

    id: str
    mesh: TriangleMesh
    roof_vertices: np.ndarray          # (V, 2) image coordinates
    roof_faces: list[list[int]]
    image: np.ndarray | None = None    # (H, W) grayscale in [0, 1]

    def __post_init__(self):
        self.roof_vertices = np.asarray(self.roof_vertices, dtype=np.float64).reshape(-1, 2)


@dataclass
class DatasetSample:
    """One fully generated training sample."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    sobel: np.ndarray
    cloud: np.ndarray
    transform: UnitSphereTransform
    pose: PoseFitReport
    split: str = ""


@dataclass
class GenerationConfig:
    """Everything that determines dataset bytes; hashed into the manifest."""

    image_size: int = 224
    focal: float = 224.0
    points: int = DEFAULT_POINTS
    seed: int = 0
    splat_radius: float = 1.0
    t0: tuple[float, float, float] = (0.0, 0.0, 1.0)
    split_fractions: tuple[float, ...] = (1.0,)

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.square(self.image_size, self.focal)

    def to_dict(self) -> dict:
        return {"image_size": self.image_size, "focal": self.focal,
                "points": self.points, "seed": self.seed,
                "splat_radius": self.splat_radius, "t0": list(self.t0),
                "split_fractions": list(self.split_fractions)}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def building_seed(base_seed: int, building_id: str) -> int:
    """Stable per-building sampling seed, independent of record order."""
    return (int(base_seed) << 32) ^ zlib.crc32(building_id.encode("utf-8"))


# ---------------------------------------------------------------------------
# Geometry ingestion
# ---------------------------------------------------------------------------

def parse_building_geometry(vertex_lines, face_lines):
    """Parse roof polygons from vertex/face text records.

    Vertex lines hold ``x y`` image coordinates; face lines hold zero-based
    whitespace-separated vertex index sequences, one polygon per line. Blank
    lines and ``#`` comments are skipped. Returns (vertices (V,2), faces).
    """
    if isinstance(vertex_lines, (str, Path)):
        vertex_lines = Path(vertex_lines).read_text(encoding="utf-8").splitlines()
    if isinstance(face_lines, (str, Path)):
        face_lines = Path(face_lines).read_text(encoding="utf-8").splitlines()

    verts = []
    for ln, line in enumerate(vertex_lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        tok = body.split()
        if len(tok) != 2:
            raise ValueError(f"vertex line {ln}: expected 'x y', got {line!r}")
        try:
            verts.append((float(tok[0]), float(tok[1])))
        except ValueError:
            raise ValueError(f"vertex line {ln}: unparseable coordinates {line!r}") from None

    faces = []
    for ln, line in enumerate(face_lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        try:
            idx = [int(t) for t in body.split()]
        except ValueError:
            raise ValueError(f"face line {ln}: unparseable index list {line!r}") from None
        if len(idx) < 3:
            raise ValueError(f"face line {ln}: a polygon needs at least 3 vertices")
        bad = [i for i in idx if i < 0 or i >= len(verts)]
        if bad:
            raise ValueError(f"face line {ln}: vertex index {bad[0]} out of range "
                             f"(have {len(verts)} vertices)")
        faces.append(idx)

    return np.asarray(verts, dtype=np.float64).reshape(-1, 2), faces


def load_geometry_dir(path, image_size: int = 224) -> list[BuildingRecord]:
    """Load ``<id>.obj`` + ``<id>.vertices`` + ``<id>.faces`` (+ optional
    ``<id>.pgm`` aerial image) triples from a directory, sorted by id.

    Roof polygon coordinates are clamped into the image frame.
    """
    path = Path(path)
    if not path.is_dir():
        raise ValueError(f"geometry directory {path} does not exist")
    records = []
    for obj_path in sorted(path.glob("*.obj")):
        bid = obj_path.stem
        vert_path = path / f"{bid}.vertices"
        face_path = path / f"{bid}.faces"
        if not vert_path.exists() or not face_path.exists():
            raise ValueError(f"building {bid}: missing .vertices or .faces file")
        mesh = fileio.read_obj(obj_path)
        verts, faces = parse_building_geometry(vert_path, face_path)
        verts = np.clip(verts, 0, image_size - 1)
        image = None
        img_path = path / f"{bid}.pgm"
        if img_path.exists():
            image = fileio.read_pgm(img_path).astype(np.float64) / 255.0
        records.append(BuildingRecord(bid, mesh, verts, faces, image))
    return records


# ---------------------------------------------------------------------------
# Synthetic buildings
# ---------------------------------------------------------------------------

def _fan(face: list[int]) -> list[tuple[int, int, int]]:
    return [(face[0], face[i], face[i + 1]) for i in range(1, len(face) - 1)]


def _quad(p0, p1, p2, p3):
    return [list(p0), list(p1), list(p2), list(p3)]


def make_synthetic_buildings(count: int, seed: int, image_size: int = 224,
                             focal: float = 224.0) -> list[BuildingRecord]:
    """Parametric flat/gable/hip-roofed boxes with consistent mesh, roof
    polygons, and a rendered grayscale image; deterministic per seed.

    Roof polygons are the normalized roof faces projected at a per-building
    generation pose chosen so the building sits inside the frame, which is
    what the translation optimizer is expected to recover.
    """
    if count < 1:
        raise ValueError("need count >= 1 synthetic buildings")
    rng = np.random.default_rng(seed)
    k = Intrinsics.square(image_size, focal)
    records = []
    for i in range(count):
        kind = ("flat", "gable", "hip")[i % 3]
        a = rng.uniform(0.75, 1.1)      # plan half-extent along x
        b = rng.uniform(0.55, 0.95)     # plan half-extent along y
        h = rng.uniform(0.5, 0.9)       # eave height
        ridge = rng.uniform(0.15, 0.35)
        tz = rng.uniform(2.4, 3.0)
        tx = rng.uniform(-0.08, 0.08)
        ty = rng.uniform(-0.08, 0.08)

        roof_polys, wall_polys = _building_faces(kind, a, b, h, ridge)
        mesh = _triangulate(roof_polys + wall_polys)

        # Normalize the way the sampled cloud will be normalized: surface
        # centroid and max vertex distance.
        areas = mesh.face_areas()
        tri_centroids = mesh.vertices[mesh.faces].mean(axis=1)
        center = (areas[:, None] * tri_centroids).sum(axis=0) / areas.sum()
        scale = np.linalg.norm(mesh.vertices - center, axis=1).max()

        verts2d = []
        faces2d = []
        for poly in roof_polys:
            base = len(verts2d)
            for p in poly:
                q = (np.asarray(p) - center) / scale
                zc = q[2] + tz
                verts2d.append((focal * (q[0] + tx) / zc + k.cx,
                                focal * (q[1] + ty) / zc + k.cy))
            faces2d.append(list(range(base, base + len(poly))))
        verts2d = np.asarray(verts2d)

        image = 0.12 + 0.06 * rng.random((image_size, image_size))
        for fi, face in enumerate(faces2d):
            face_mask = rasterize_polygon_mask(verts2d, [face], image_size, image_size)
            image[face_mask != 0] = 0.45 + 0.1 * (fi % 5)

        records.append(BuildingRecord(f"b{i:03d}_{kind}", mesh, verts2d,
                                      faces2d, image))
    return records


def _building_faces(kind: str, a: float, b: float, h: float, ridge: float):
    """Planar face polygons (roof faces first) for one building type.

    The footprint sits at z=0 and the structure rises toward -z so the roof
    faces the default top-down camera.
    """
    g = 0.0      # ground level
    e = -h       # eave level
    r = -(h + ridge)

    floor = _quad((-a, -b, g), (a, -b, g), (a, b, g), (-a, b, g))
    walls = [
        _quad((-a, -b, g), (a, -b, g), (a, -b, e), (-a, -b, e)),
        _quad((a, -b, g), (a, b, g), (a, b, e), (a, -b, e)),
        _quad((a, b, g), (-a, b, g), (-a, b, e), (a, b, e)),
        _quad((-a, b, g), (-a, -b, g), (-a, -b, e), (-a, b, e)),
    ]

    if kind == "flat":
        roof = [_quad((-a, -b, e), (a, -b, e), (a, b, e), (-a, b, e))]
        return roof, walls + [floor]

    if kind == "gable":
        roof = [
            _quad((-a, -b, e), (a, -b, e), (a, 0.0, r), (-a, 0.0, r)),
            _quad((-a, 0.0, r), (a, 0.0, r), (a, b, e), (-a, b, e)),
        ]
        gables = [
            [[-a, -b, e], [-a, b, e], [-a, 0.0, r]],
            [[a, -b, e], [a, b, e], [a, 0.0, r]],
        ]
        return roof, walls + gables + [floor]

    if kind == "hip":
        inset = 0.45 * min(a, b)
        r0 = (-a + inset, 0.0, r)
        r1 = (a - inset, 0.0, r)
        roof = [
            _quad((-a, -b, e), (a, -b, e), r1, r0),
            _quad((a, b, e), (-a, b, e), r0, r1),
            [[-a, b, e], [-a, -b, e], list(r0)],
            [[a, -b, e], [a, b, e], list(r1)],
        ]
        return roof, walls + [floor]

    raise ValueError(f"unknown building kind {kind!r}")


def _triangulate(polys) -> TriangleMesh:
    verts = []
    tris = []
    for poly in polys:
        base = len(verts)
        verts.extend(poly)
        tris.extend(_fan(list(range(base, base + len(poly)))))
    return TriangleMesh(np.asarray(verts, dtype=np.float64),
                        np.asarray(tris, dtype=np.int64))


# ---------------------------------------------------------------------------
# Sample generation
# ---------------------------------------------------------------------------

@dataclass
class GenerationResult:
    """Outcome of one building: an emitted sample, a rejection, or a failure."""

    id: str
    status: str                       # "emitted" | "rejected" | "failed"
    sample: DatasetSample | None = None
    pose: PoseFitReport | None = None
    error: str = ""


def generate_sample(rec: BuildingRecord, cfg: GenerationConfig) -> GenerationResult:
    """Run the full per-building pipeline; never raises for per-building
    data problems (they come back as rejected/failed results)."""
    try:
        size = cfg.image_size
        mask = rasterize_polygon_mask(rec.roof_vertices, rec.roof_faces, size, size)
        if not mask.any():
            return GenerationResult(rec.id, "failed", error="roof polygons rasterize to an empty mask")
        image = rec.image if rec.image is not None else mask.astype(np.float64)
        if image.shape != (size, size):
            return GenerationResult(rec.id, "failed", error=f"image shape {image.shape} != ({size}, {size})")
        sobel_map = masked_sobel(image, mask)
        raw = sample_mesh(rec.mesh, cfg.points, building_seed(cfg.seed, rec.id))
        cloud, transform = normalize_unit_sphere(raw)
        pose = optimize_camera_translation(cloud, mask, cfg.t0, cfg.intrinsics(),
                                           splat_radius=cfg.splat_radius)
    except (ValueError, ZeroDivisionError) as exc:
        return GenerationResult(rec.id, "failed", error=str(exc))

    sample = DatasetSample(rec.id, image, mask, sobel_map, cloud, transform, pose)
    if not pose.accepted:
        return GenerationResult(rec.id, "rejected", sample=sample, pose=pose)
    return GenerationResult(rec.id, "emitted", sample=sample, pose=pose)


def split_dataset(entries: list[dict], fractions, seed: int,
                  names: tuple[str, ...] | None = None) -> list[dict]:
    """Tag emitted manifest entries with deterministic contiguous splits.

    Entries are shuffled by seed, then assigned contiguously according to
    ``fractions`` (which must sum to 1). Returns the same entry dicts with
    ``split`` filled in.
    """
    fractions = [float(f) for f in fractions]
    if any(f <= 0 for f in fractions):
        raise ValueError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")
    if names is None:
        names = {1: ("train",), 2: ("train", "val"),
                 3: ("train", "val", "test")}.get(
            len(fractions), tuple(f"split{i}" for i in range(len(fractions))))
    if len(names) != len(fractions):
        raise ValueError("split names must match fractions")

    emitted = [e for e in entries if e.get("status") == "emitted"]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(emitted))
    bounds = np.floor(np.cumsum(fractions) * len(emitted) + 1e-9).astype(int)
    start = 0
    for name, stop in zip(names, bounds):
        for j in order[start:stop]:
            emitted[j]["split"] = name
        start = stop
    return entries


def write_sample(root: Path, sample: DatasetSample, rejected: bool = False) -> dict:
    """Write one sample's files; returns manifest-relative paths."""
    root = Path(root)
    prefix = Path("rejects") if rejected else Path(".")
    paths = {
        "image": prefix / "images" / f"{sample.id}.pgm",
        "mask": prefix / "masks" / f"{sample.id}.pgm",
        "sobel": prefix / "sobel" / f"{sample.id}.raw",
        "cloud": prefix / "clouds" / f"{sample.id}.ply",
        "pose": prefix / "poses" / f"{sample.id}.json",
    }
    for p in paths.values():
        (root / p).parent.mkdir(parents=True, exist_ok=True)
    fileio.write_pgm(root / paths["image"], sample.image)
    fileio.write_pgm(root / paths["mask"], sample.mask * np.uint8(255))
    fileio.write_raw_grid(root / paths["sobel"], sample.sobel, dtype="float64")
    fileio.write_ply(root / paths["cloud"], sample.cloud)
    pose_doc = sample.pose.to_dict()
    pose_doc["transform"] = sample.transform.to_dict()
    fileio.write_json(root / paths["pose"], pose_doc)
    return {k: p.as_posix() for k, p in paths.items()}


def generate_dataset(records: list[BuildingRecord], cfg: GenerationConfig,
                     out_root, workers: int | None = None) -> dict:
    """Generate every building, write samples + manifest.jsonl, and return a
    summary with emitted/rejected/failed counts."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    nworkers = worker_count(workers, len(records))

    if nworkers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            results = list(pool.map(lambda r: generate_sample(r, cfg), records))
    else:
        results = [generate_sample(r, cfg) for r in records]

    cfg_hash = cfg.hash()
    entries = []
    for res in results:
        entry = {"id": res.id, "status": res.status, "split": "",
                 "config_hash": cfg_hash, "seed": cfg.seed}
        if res.status == "failed":
            entry["error"] = res.error
        else:
            entry["paths"] = write_sample(out_root, res.sample,
                                          rejected=res.status == "rejected")
            entry["iou"] = res.pose.iou
            entry["tz"] = res.pose.tz
        entries.append(entry)

    emitted = [e for e in entries if e["status"] == "emitted"]
    if emitted:
        split_dataset(entries, cfg.split_fractions, cfg.seed)

    with open(out_root / "manifest.jsonl", "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + "\n")

    return {"total": len(entries), "emitted": len(emitted),
            "rejected": sum(1 for e in entries if e["status"] == "rejected"),
            "failed": sum(1 for e in entries if e["status"] == "failed"),
            "manifest": str(out_root / "manifest.jsonl")}


def read_manifest(root) -> list[dict]:
    root = Path(root)
    path = root / "manifest.jsonl" if root.is_dir() else root
    if not path.exists():
        raise ValueError(f"manifest not found at {path}")
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


def load_sample(root, entry: dict) -> DatasetSample:
    """Load a generated sample back from its manifest entry."""
    root = Path(root)
    paths = entry["paths"]
    image = fileio.read_pgm(root / paths["image"]).astype(np.float64) / 255.0
    mask = fileio.read_mask_pgm(root / paths["mask"])
    sobel_map = fileio.read_raw_grid(root / paths["sobel"])
    cloud = fileio.read_ply(root / paths["cloud"])
    pose_doc = fileio.read_json(root / paths["pose"])
    pose = PoseFitReport(tx=pose_doc["tx"], ty=pose_doc["ty"], tz=pose_doc["tz"],
                         cost_z=0.0, cost_x=0.0, cost_y=0.0,
                         iterations=pose_doc["iterations"], iou=pose_doc["iou"],
                         mask_iou=0.0, accepted=pose_doc["accepted"])
    transform = UnitSphereTransform.from_dict(pose_doc["transform"])
    return DatasetSample(entry["id"], image, mask, sobel_map, cloud, transform,
                         pose, entry.get("split", ""))
