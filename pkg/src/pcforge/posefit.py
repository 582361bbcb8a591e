"""Camera translation recovery: align a rasterized cloud with a ground-truth
mask by sequential derivative-free 1-D minimizations over (tz, tx, ty), with
a bounding-box IoU acceptance gate.

Bounding boxes are integer-valued, so all three costs are piecewise constant
in the translation; the line search therefore combines a coarse bracket scan
with golden-section refinement and resolves plateau ties toward the bracket
midpoint for reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import (BoundingBox2D, CameraPose, Intrinsics, bbox_of_mask,
                     rasterize_bbox, rasterize_points)
from .geometry import as_cloud

IOU_GATE = 0.93
DEFAULT_TZ_BRACKET = (0.3, 5.0)
DEFAULT_TXY_BRACKET = (-1.0, 1.0)

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class PoseFitReport:
    """Outcome of one camera-translation fit."""

    tx: float
    ty: float
    tz: float
    cost_z: float
    cost_x: float
    cost_y: float
    iterations: int
    iou: float
    mask_iou: float  # pixel-mask IoU, diagnostic only; the gate uses bbox IoU
    accepted: bool

    def to_dict(self) -> dict:
        return {"tx": self.tx, "ty": self.ty, "tz": self.tz,
                "iou": self.iou, "iterations": self.iterations,
                "accepted": self.accepted}


@dataclass
class LineMinResult:
    x: float
    fun: float
    evals: int
    truncated: bool


def cost_z(bgt: BoundingBox2D, br: BoundingBox2D) -> float:
    """Root sum of squared differences over all four box edges."""
    return math.sqrt((bgt.x_min - br.x_min) ** 2 + (bgt.x_max - br.x_max) ** 2
                     + (bgt.y_min - br.y_min) ** 2 + (bgt.y_max - br.y_max) ** 2)


def cost_x(bgt: BoundingBox2D, br: BoundingBox2D) -> float:
    """Root sum of squared differences over the left/right edges."""
    return math.sqrt((bgt.x_min - br.x_min) ** 2 + (bgt.x_max - br.x_max) ** 2)


def cost_y(bgt: BoundingBox2D, br: BoundingBox2D) -> float:
    """Root sum of squared differences over the top/bottom edges."""
    return math.sqrt((bgt.y_min - br.y_min) ** 2 + (bgt.y_max - br.y_max) ** 2)


def bbox_iou(a: BoundingBox2D, b: BoundingBox2D) -> float:
    """Intersection over union of two boxes on inclusive pixel extents."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1.0
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1.0
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.width * a.height + b.width * b.height - inter
    return inter / union if union > 0 else 0.0


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Pixel-level IoU of two binary masks."""
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def center_mask_foreground(mask: np.ndarray) -> np.ndarray:
    """Shift the foreground so its bbox center lands on the image center.

    The integer shift rounds halves toward negative; pixels pushed off-grid
    are dropped.
    """
    mask = np.asarray(mask)
    box = bbox_of_mask(mask)
    h, w = mask.shape
    bcx, bcy = box.center
    dx = int(math.ceil((w - 1) / 2.0 - bcx - 0.5))
    dy = int(math.ceil((h - 1) / 2.0 - bcy - 0.5))
    out = np.zeros_like(mask)
    ys, xs = np.nonzero(mask)
    xs = xs + dx
    ys = ys + dy
    keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    out[ys[keep], xs[keep]] = 1
    return out


def line_minimize(f, x0: float, bracket: tuple[float, float], tol: float = 1e-4,
                  max_eval: int = 200, scan_points: int = 33) -> LineMinResult:
    """Derivative-free 1-D minimization of ``f`` on ``bracket``.

    A coarse scan over the bracket (always including x0) localizes the best
    region, then golden-section search refines it down to ``tol``. When
    evaluations tie -- the costs here are piecewise constant -- the bracket
    shrinks from both ends, and the reported minimizer is the evaluated point
    with the lowest value that lies closest to the bracket midpoint. The
    result satisfies f(x) <= f(x0). Exhausting ``max_eval`` returns the best
    point seen so far with ``truncated`` set.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    if not tol > 0:
        raise ValueError("tol must be positive")
    mid = 0.5 * (lo + hi)

    evals = 0
    seen: list[tuple[float, float]] = []

    def probe(x: float) -> float:
        nonlocal evals
        fx = float(f(x))
        evals += 1
        seen.append((x, fx))
        return fx

    def best() -> tuple[float, float]:
        # Lowest value; ties resolved toward the bracket midpoint, then
        # toward the smaller x.
        return min(seen, key=lambda p: (p[1], abs(p[0] - mid), p[0]))

    def result(truncated: bool) -> LineMinResult:
        x, fx = best()
        return LineMinResult(x, fx, evals, truncated)

    xs = list(np.linspace(lo, hi, max(scan_points, 3)))
    if lo <= x0 <= hi:
        xs.append(float(x0))
    xs.sort()
    for x in xs:
        if evals >= max_eval:
            return result(True)
        probe(x)

    bx, _ = best()
    i = xs.index(bx)
    a = xs[i - 1] if i > 0 else lo
    b = xs[i + 1] if i < len(xs) - 1 else hi

    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    if evals + 2 > max_eval:
        return result(True)
    fc = probe(c)
    fd = probe(d)
    while (b - a) > tol:
        if evals >= max_eval:
            return result(True)
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = probe(c)
        elif fd < fc:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = probe(d)
        else:
            # Plateau: the minimum of a unimodal-with-plateaus function lies
            # between the two equal probes; shrink from both ends.
            a, b = c, d
            if (b - a) <= tol:
                break
            c = b - _INVPHI * (b - a)
            d = a + _INVPHI * (b - a)
            if evals + 2 > max_eval:
                return result(True)
            fc = probe(c)
            fd = probe(d)
    return result(False)


def _recenter_bbox(box: BoundingBox2D, k: Intrinsics) -> BoundingBox2D:
    cx, cy = box.center
    return box.shifted((k.width - 1) / 2.0 - cx, (k.height - 1) / 2.0 - cy)


def optimize_camera_translation(pc: np.ndarray, mask_gt: np.ndarray,
                                t0=(0.0, 0.0, 1.0),
                                k: Intrinsics | None = None,
                                tz_bracket=DEFAULT_TZ_BRACKET,
                                txy_bracket=DEFAULT_TXY_BRACKET,
                                tol: float = 1e-4,
                                improvement_tol: float = 1e-4,
                                max_iterations: int = 1000,
                                splat_radius: float = 1.0,
                                max_eval: int = 200) -> PoseFitReport:
    """Recover the camera translation aligning the cloud with the mask.

    Each outer pass minimizes cost_z over tz (comparing size only: both the
    centered ground-truth bbox and the rasterized bbox are recentered on the
    image center), then cost_x over tx and cost_y over ty against the
    uncentered mask. The loop stops when the total cost improves by no more
    than ``improvement_tol`` after a full pass, or at ``max_iterations``.
    """
    pc = as_cloud(pc)
    mask_gt = np.asarray(mask_gt)
    if k is None:
        k = Intrinsics()
    bgt = bbox_of_mask(mask_gt)  # raises on an empty mask
    bgt_centered = bbox_of_mask(center_mask_foreground(mask_gt))

    def raster_bbox(tx, ty, tz):
        return rasterize_bbox(pc, CameraPose.top_down(tx, ty, tz), k,
                              splat_radius)

    def pass_costs(tx, ty, tz):
        rb = raster_bbox(tx, ty, tz)
        if rb is None:
            return math.inf, math.inf, math.inf
        return (cost_z(bgt_centered, _recenter_bbox(rb, k)),
                cost_x(bgt, rb), cost_y(bgt, rb))

    tx, ty, tz = (float(v) for v in t0)
    prev_total = sum(pass_costs(tx, ty, tz))
    iterations = 0
    best = (tx, ty, tz, prev_total)

    while iterations < max_iterations:
        def fz(v):
            rb = raster_bbox(tx, ty, v)
            return math.inf if rb is None else cost_z(bgt_centered, _recenter_bbox(rb, k))

        rz = line_minimize(fz, tz, tz_bracket, tol, max_eval)
        if math.isinf(rz.fun):
            raise ValueError("cloud is not visible for any probed depth")
        tz = rz.x

        def fx(v):
            rb = raster_bbox(v, ty, tz)
            return math.inf if rb is None else cost_x(bgt, rb)

        tx = line_minimize(fx, tx, txy_bracket, tol, max_eval).x

        def fy(v):
            rb = raster_bbox(tx, v, tz)
            return math.inf if rb is None else cost_y(bgt, rb)

        ty = line_minimize(fy, ty, txy_bracket, tol, max_eval).x

        iterations += 1
        total = sum(pass_costs(tx, ty, tz))
        if total < best[3]:
            best = (tx, ty, tz, total)
        improvement = prev_total - total
        prev_total = total
        if improvement <= improvement_tol:
            break

    tx, ty, tz, _ = best
    cz, cx_, cy_ = pass_costs(tx, ty, tz)
    final_mask, _ = rasterize_points(pc, CameraPose.top_down(tx, ty, tz), k,
                                     splat_radius)
    if not final_mask.any():
        raise ValueError("cloud is not visible at the optimized translation")
    iou = bbox_iou(bgt, bbox_of_mask(final_mask))
    return PoseFitReport(tx=tx, ty=ty, tz=tz, cost_z=cz, cost_x=cx_, cost_y=cy_,
                         iterations=iterations, iou=iou,
                         mask_iou=mask_iou(mask_gt, final_mask),
                         accepted=iou > IOU_GATE)
