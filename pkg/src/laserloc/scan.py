"""Multi-stop laser scan: plan slide stops, score candidate lines, localize."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from laserloc.errors import (
    EmptyLineError,
    FitError,
    GeometryError,
    LocalizationError,
    OutOfRangeError,
    ParameterError,
)
from laserloc.lle import BrceParams, Centerline, NoiseParams, extract_laser_line
from laserloc.triangulate import Calibration, pixel_to_normalized, triangulate_point

log = logging.getLogger(__name__)

N_STOPS = 5
STOP_SPACING = 0.02
STROKE = 0.20


@dataclass(frozen=True)
class ScanParams:
    brce: BrceParams = field(default_factory=BrceParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    # picked by evaluate.tune_weights on a held-out simulator corpus
    w1: float = 0.1
    w2: float = 0.9
    depth_band: tuple = (0.5, 2.5)
    roi_margin: float = 1.0  # scales the detection box before cropping


@dataclass
class ScanCandidate:
    stop_index: int
    slide_offset: float
    line: Centerline | None = None
    n_pixels: int = 0
    center_dist: float = math.inf
    confidence: float = -math.inf
    status: str = "ok"

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def features(self, norms) -> tuple[float, float]:
        """(n_norm, d_norm) as they enter the confidence score."""
        height, diag = norms
        return min(self.n_pixels / height, 1.0), self.center_dist / diag


@dataclass
class ScanResult:
    candidates: list
    selected: int
    center_2d: tuple
    center_3d: np.ndarray

    def to_dict(self) -> dict:
        return {
            "stops": [
                {
                    "stop_index": c.stop_index,
                    "offset_m": c.slide_offset,
                    "n_pixels": c.n_pixels,
                    "center_dist_px": None if math.isinf(c.center_dist) else c.center_dist,
                    "confidence": None if math.isinf(c.confidence) else c.confidence,
                    "status": c.status,
                }
                for c in self.candidates
            ],
            "selected": self.selected,
            "center_2d": [float(v) for v in self.center_2d],
            "center_3d": [float(v) for v in self.center_3d],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def plan_stops(rough_center, cal: Calibration, n: int = N_STOPS,
               spacing: float = STOP_SPACING, stroke: float = STROKE) -> list[float]:
    """Slide offsets whose middle plane passes through the rough center."""
    x, y, z = (float(c) for c in rough_center)
    if not z > 0:
        raise ParameterError("rough center must be in front of the camera")
    # offset that puts the point on the plane: solve the plane equation for s
    mid = (cal.baseline_L + x * math.cos(cal.alpha) + y * math.tan(cal.beta)
           - z * math.sin(cal.alpha)) / math.cos(cal.alpha)
    half = spacing * (n - 1) / 2
    reach = 2 * spacing
    if mid < -reach or mid > stroke + reach:
        raise OutOfRangeError(f"rough center needs slide offset {mid:.3f} m, stroke is [0, {stroke}]")
    first = min(max(mid - half, 0.0), stroke - 2 * half)
    return [first + k * spacing for k in range(n)]


def score_candidate(line: Centerline, est_center, weights=(0.1, 0.9), norms=(1.0, 1.0)):
    """Return (n_pixels, center_dist, confidence) for one extracted line.

    The center distance is measured from ``est_center`` to the line point at
    the estimate's row, clamped to the line's row extent. ``norms`` is (box
    height, box diagonal) in pixels; the pixel count and distance are divided
    by them so both terms are dimensionless.
    """
    n = line.n_pixels
    col, row = line_center(line, est_center[1])
    dist = math.hypot(col - est_center[0], row - est_center[1])
    height, diag = norms
    conf = weights[0] * min(n / height, 1.0) - weights[1] * dist / diag
    return n, dist, conf


def select_best(candidates) -> int:
    ok = [c for c in candidates if not c.failed]
    if not ok:
        raise LocalizationError("every scan stop failed")
    best = min(ok, key=lambda c: (-c.confidence, c.center_dist, c.stop_index))
    return best.stop_index


def detection_roi(detection: dict, shape, margin: float = 1.0):
    (cx, cy), (w, h) = detection["center"], detection["size"]
    hw, hh = 0.5 * w * margin, 0.5 * h * margin
    x0 = max(int(math.floor(cx - hw)), 0)
    y0 = max(int(math.floor(cy - hh)), 0)
    x1 = min(int(math.ceil(cx + hw)) + 1, shape[1])
    y1 = min(int(math.ceil(cy + hh)) + 1, shape[0])
    return x0, y0, x1, y1


def line_center(line: Centerline, est_row: float) -> tuple[float, float]:
    """Point on the fitted line at the detector's row, clamped to the line's extent."""
    lo, hi = line.domain
    row = min(max(est_row, lo), hi)
    return float(line.evaluate(row)), float(row)


def run_stop(image, index: int, offset: float, detection: dict, params: ScanParams) -> ScanCandidate:
    cand = ScanCandidate(stop_index=index, slide_offset=offset)
    roi = detection_roi(detection, (image.height, image.width), params.roi_margin)
    try:
        cand.line = extract_laser_line(image, params.brce, params.noise, roi=roi).line
    except (EmptyLineError, FitError) as exc:
        cand.status = "empty" if isinstance(exc, EmptyLineError) else "fit_failed"
        return cand
    w, h = detection["size"]
    cand.n_pixels, cand.center_dist, cand.confidence = score_candidate(
        cand.line, detection["center"], (params.w1, params.w2), (h, math.hypot(w, h))
    )
    return cand


def localize(images, offsets, detection: dict, cal: Calibration,
             params: ScanParams = ScanParams()) -> ScanResult:
    """Extract a line per stop, pick the most confident one and triangulate its center.

    ``detection`` holds the detector box as ``{"center": [col, row],
    "size": [w, h]}`` in pixels.
    """
    if len(images) != len(offsets):
        raise ParameterError("need one slide offset per image")
    candidates = [
        run_stop(img, k, off, detection, params) for k, (img, off) in enumerate(zip(images, offsets))
    ]
    best = select_best(candidates)
    chosen = candidates[best]
    center_2d = line_center(chosen.line, detection["center"][1])
    uv = pixel_to_normalized(center_2d, cal)
    point = triangulate_point(uv, cal.at_offset(chosen.slide_offset))
    lo, hi = params.depth_band
    if not lo <= point[2] <= hi:
        raise GeometryError(f"depth {point[2]:.3f} m outside valid band [{lo}, {hi}]")
    return ScanResult(candidates=candidates, selected=best, center_2d=center_2d, center_3d=point)
