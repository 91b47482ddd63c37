"""Laser-plane triangulation from normalized image coordinates to 3D.

Camera frame: x right, y down, z forward. The laser plane is

    -cos(alpha) * x - tan(beta) * y + sin(alpha) * z = L - s * cos(alpha)

for baseline ``L`` and slide offset ``s``; a pixel with normalized
coordinates (u, v) therefore sits at depth ``z = L_eff / D`` with
``D = sin(alpha) - u cos(alpha) - v tan(beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from laserloc.errors import (
    BehindCameraError,
    DegenerateGeometryError,
    GeometryError,
    ParameterError,
)

EPS = 1e-6

CALIB_KEYS = ("baseline_l_m", "alpha_deg", "beta_deg", "fx_px", "fy_px", "cx_px", "cy_px")


@dataclass(frozen=True)
class Calibration:
    baseline_L: float
    alpha: float
    beta: float
    fx: float
    fy: float
    cx: float
    cy: float
    slide_offset: float = 0.0

    def __post_init__(self):
        if not self.baseline_L > 0:
            raise ParameterError("baseline_L must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ParameterError("focal lengths must be positive")

    @property
    def effective_baseline(self) -> float:
        return self.baseline_L - self.slide_offset * math.cos(self.alpha)

    def at_offset(self, slide_offset: float) -> "Calibration":
        return Calibration(
            self.baseline_L, self.alpha, self.beta, self.fx, self.fy, self.cx, self.cy,
            slide_offset,
        )

    def plane(self) -> tuple[np.ndarray, float]:
        """Laser plane as (normal, offset) with ``normal . X = offset``."""
        n = np.array([-math.cos(self.alpha), -math.tan(self.beta), math.sin(self.alpha)])
        return n, self.effective_baseline

    def laser_origin(self) -> np.ndarray:
        """Point where the laser plane crosses the camera's x axis."""
        return np.array([-self.effective_baseline / math.cos(self.alpha), 0.0, 0.0])

    @classmethod
    def from_degrees(cls, baseline_l_m, alpha_deg, beta_deg, fx_px, fy_px, cx_px, cy_px):
        return cls(
            float(baseline_l_m), math.radians(alpha_deg), math.radians(beta_deg),
            float(fx_px), float(fy_px), float(cx_px), float(cy_px),
        )

    def to_dict(self) -> dict:
        return {
            "baseline_l_m": self.baseline_L,
            "alpha_deg": math.degrees(self.alpha),
            "beta_deg": math.degrees(self.beta),
            "fx_px": self.fx,
            "fy_px": self.fy,
            "cx_px": self.cx,
            "cy_px": self.cy,
        }


def load_calibration(path) -> Calibration:
    """Parse a flat ``key = value`` calibration file; unknown keys are rejected."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in CALIB_KEYS:
                raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ParameterError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = float(val)
            except ValueError:
                raise ParameterError(f"{path}:{lineno}: {key} is not a number") from None
    missing = [k for k in CALIB_KEYS if k not in values]
    if missing:
        raise ParameterError(f"{path}: missing keys {missing}")
    return Calibration.from_degrees(**values)


def save_calibration(cal: Calibration, path) -> None:
    with open(path, "w") as fh:
        for key, val in cal.to_dict().items():
            fh.write(f"{key} = {val!r}\n")


def pixel_to_normalized(px, cal: Calibration):
    col, row = px
    return (np.asarray(col, dtype=float) - cal.cx) / cal.fx, (
        np.asarray(row, dtype=float) - cal.cy
    ) / cal.fy


def normalized_to_pixel(uv, cal: Calibration):
    u, v = uv
    return np.asarray(u, dtype=float) * cal.fx + cal.cx, np.asarray(v, dtype=float) * cal.fy + cal.cy


def triangulate_point(uv, cal: Calibration) -> np.ndarray:
    """3D point (x, y, z) in meters for one normalized image point."""
    u, v = float(uv[0]), float(uv[1])
    d = math.sin(cal.alpha) - u * math.cos(cal.alpha) - v * math.tan(cal.beta)
    if abs(d) <= EPS:
        raise DegenerateGeometryError(f"ray ({u:.4g}, {v:.4g}) parallel to laser plane")
    z = cal.effective_baseline / d
    if z <= 0:
        raise BehindCameraError(f"triangulated depth {z:.4g} m is not in front of camera")
    return np.array([u * z, v * z, z])


def triangulate_many(u, v, cal: Calibration):
    """Vectorized triangulation; returns (points, valid) with invalid rows set to nan."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = math.sin(cal.alpha) - u * math.cos(cal.alpha) - v * math.tan(cal.beta)
    ok = np.abs(d) > EPS
    z = np.full_like(d, np.nan)
    z[ok] = cal.effective_baseline / d[ok]
    ok &= z > 0
    z[~ok] = np.nan
    return np.stack([u * z, v * z, z], axis=-1), ok


def line_to_3d(line, cal: Calibration, slide_offset: float | None = None, use_fit: bool = True):
    """Triangulate every row of a centerline.

    With ``use_fit`` the fitted curve is sampled at each integer row of its
    domain; otherwise the raw centroids are used. Returns ``(rows, points)``
    with degenerate rows dropped.
    """
    if slide_offset is not None:
        cal = cal.at_offset(slide_offset)
    if use_fit:
        lo, hi = line.domain
        rows = np.arange(lo, hi + 1)
        cols = line.evaluate(rows)
    else:
        rows = np.asarray(line.rows)
        cols = np.asarray(line.centroids, dtype=float)
    u, v = pixel_to_normalized((cols, rows), cal)
    pts, ok = triangulate_many(u, v, cal)
    if not ok.any():
        raise GeometryError("every row of the line is degenerate")
    return rows[ok], pts[ok]
