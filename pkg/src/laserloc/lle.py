"""Laser line extraction: ridge detection, noise removal, focusing, fitting.

The four stages are usable on their own; :func:`extract_laser_line` chains
them the way a scan stop does.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import Polynomial

from laserloc import kernels
from laserloc.errors import EmptyLineError, FitError, ParameterError
from laserloc.imagekit import RasterImage, as_array, mask_to_image, red_channel, save_image

log = logging.getLogger(__name__)

DEFAULT_ORDER = 4


@dataclass(frozen=True)
class BrceParams:
    step: int = 4
    th: int = 40

    def __post_init__(self):
        if int(self.step) != self.step or self.step < 1:
            raise ParameterError(f"step must be an integer >= 1, got {self.step}")
        if int(self.th) != self.th or self.th < 0:
            raise ParameterError(f"th must be an integer >= 0, got {self.th}")


@dataclass(frozen=True)
class NoiseParams:
    theta: int = 8
    gamma: int = 3
    window_width_frac: float = 0.25
    window_height_frac: float = 0.5

    def __post_init__(self):
        if int(self.theta) != self.theta or self.theta < 1:
            raise ParameterError(f"theta must be an integer >= 1, got {self.theta}")
        if int(self.gamma) != self.gamma or self.gamma < 1:
            raise ParameterError(f"gamma must be an integer >= 1, got {self.gamma}")
        if not (0 < self.window_width_frac <= 1 and 0 < self.window_height_frac <= 1):
            raise ParameterError("window fractions must lie in (0, 1]")

    def window(self, width: int, height: int) -> tuple[int, int]:
        """Window (w, h) for a mask of the given size, validated."""
        w = int(np.floor(width * self.window_width_frac))
        h = int(np.floor(height * self.window_height_frac))
        if w < 1 or h < 1:
            raise ParameterError(f"noise window {w}x{h} is smaller than one pixel")
        if not self.theta <= w * h:
            raise ParameterError(f"theta={self.theta} exceeds window area {w * h}")
        if not h / w > 1:
            raise ParameterError(f"noise window must be taller than wide, got {w}x{h}")
        return w, h


@dataclass(eq=False)
class Centerline:
    """Per-row sub-pixel laser position and its fitted polynomial.

    ``poly`` holds c0..c4 of ``u = sum(ck * v**k)`` in image row units. Higher
    coefficients are zero when the fit order had to be reduced.
    """

    rows: np.ndarray
    centroids: np.ndarray
    counts: np.ndarray | None = None
    poly: np.ndarray | None = None
    domain: tuple[int, int] | None = None
    order: int | None = None
    residual_rms: float | None = None
    _scaled: Polynomial | None = field(default=None, repr=False)

    @property
    def n_pixels(self) -> int:
        return int(len(self.rows))

    @property
    def fitted(self) -> bool:
        return self._scaled is not None

    def evaluate(self, v, extrapolate: bool = False):
        """Column of the fitted curve at row(s) ``v``."""
        if not self.fitted:
            raise FitError("centerline has no fitted curve")
        v = np.asarray(v, dtype=float)
        lo, hi = self.domain
        if not extrapolate and (np.any(v < lo) or np.any(v > hi)):
            raise ParameterError(f"rows outside fitted domain [{lo}, {hi}]")
        return self._scaled(v)

    def mid_row(self) -> float:
        lo, hi = self.domain if self.domain is not None else (self.rows[0], self.rows[-1])
        return 0.5 * (lo + hi)


def brce_detect(red, p: BrceParams = BrceParams()) -> np.ndarray:
    """Mark pixels brighter than both horizontal neighbours ``step`` away by more than ``th``."""
    arr = as_array(red)
    if arr.ndim != 2:
        raise ParameterError("brce_detect needs a single-channel image")
    if not 2 * p.step < arr.shape[1]:
        raise ParameterError(f"step={p.step} too large for width {arr.shape[1]}")
    return kernels.brce(arr, int(p.step), int(p.th))


def remove_noise(mask, p: NoiseParams = NoiseParams()) -> np.ndarray:
    """Clear windows holding at most ``theta`` laser pixels.

    Windows are ``w x h`` with ``w, h`` set by the window fractions. They tile
    vertically with stride ``h`` and slide horizontally with stride ``gamma``;
    the last window in each direction is clamped to the border. Counts come
    from the input mask, never from partially cleared output.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ParameterError("mask must be 2-D")
    h_img, w_img = mask.shape
    w, h = p.window(w_img, h_img)
    return kernels.noise_filter(mask.astype(np.uint8), w, h, int(p.theta), int(p.gamma))


def focus_line(mask) -> Centerline:
    mask = np.asarray(mask)
    counts = mask.sum(axis=1)
    rows = np.flatnonzero(counts)
    if rows.size == 0:
        raise EmptyLineError("no laser pixels in mask")
    cols = np.arange(mask.shape[1], dtype=float)
    sums = (mask[rows] * cols).sum(axis=1)
    return Centerline(
        rows=rows.astype(np.int64),
        centroids=sums / counts[rows],
        counts=counts[rows].astype(np.int64),
    )


def fit_curve(line: Centerline, order: int = DEFAULT_ORDER) -> Centerline:
    n = len(line.rows)
    if n < 2:
        raise FitError(f"need at least 2 rows to fit, got {n}")
    used = min(order, n - 1)
    if used < order:
        log.warning("fit order reduced from %d to %d (%d rows)", order, used, n)

    v = np.asarray(line.rows, dtype=float)
    lo, hi = int(line.rows.min()), int(line.rows.max())
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    t = (v - center) / half
    vander = np.vander(t, used + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(vander, line.centroids, rcond=None)
    resid = line.centroids - vander @ coef
    scaled = Polynomial(coef, domain=[lo, hi], window=[-1, 1])

    raw = np.zeros(DEFAULT_ORDER + 1 if used <= DEFAULT_ORDER else used + 1)
    conv = scaled.convert().coef
    raw[: len(conv)] = conv
    return replace(
        line,
        poly=raw,
        domain=(lo, hi),
        order=used,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        _scaled=scaled,
    )


@dataclass(eq=False)
class Extraction:
    """Result of one run of the pipeline, with stage outputs for diagnostics."""

    line: Centerline | None
    red: np.ndarray
    brce: np.ndarray
    clean: np.ndarray
    roi: tuple[int, int, int, int]

    def dump(self, prefix) -> list[str]:
        """Write stage images next to ``prefix``; returns the paths written."""
        prefix = str(prefix)
        paths = [prefix + ".red.pgm", prefix + ".brce.pgm", prefix + ".clean.pgm", prefix + ".fit.png"]
        save_image(RasterImage(self.red), paths[0])
        save_image(mask_to_image(self.brce), paths[1])
        save_image(mask_to_image(self.clean), paths[2])
        save_image(self.overlay(), paths[3])
        return paths

    def overlay(self) -> RasterImage:
        gray = self.red
        rgb = np.stack([gray, gray, gray], axis=-1).copy()
        rgb[self.clean.astype(bool)] = (0, 0, 255)
        if self.line is not None and self.line.fitted:
            x0, y0 = self.roi[0], self.roi[1]
            lo, hi = self.line.domain
            for v in range(lo, hi + 1):
                c = int(round(float(self.line.evaluate(v)))) - x0
                r = v - y0
                if 0 <= r < rgb.shape[0] and 0 <= c < rgb.shape[1]:
                    rgb[r, c] = (0, 255, 0)
        return RasterImage(rgb)


def extract_laser_line(
    img: RasterImage,
    bp: BrceParams = BrceParams(),
    np_: NoiseParams = NoiseParams(),
    roi: tuple[int, int, int, int] | None = None,
    order: int = DEFAULT_ORDER,
    dump_prefix: str | os.PathLike | None = None,
) -> Extraction:
    """Run the full pipeline on ``img``.

    ``roi`` is ``(x0, y0, x1, y1)`` in pixels (exclusive upper bounds); the
    returned centerline is always in full-image coordinates.
    """
    red = red_channel(img).pixels
    if roi is None:
        roi = (0, 0, img.width, img.height)
    x0, y0, x1, y1 = (int(v) for v in roi)
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, img.width), min(y1, img.height)
    if x1 <= x0 or y1 <= y0:
        raise ParameterError(f"empty region of interest {roi}")
    crop = red[y0:y1, x0:x1]

    g = brce_detect(crop, bp)
    c = remove_noise(g, np_)
    result = Extraction(line=None, red=crop, brce=g, clean=c, roi=(x0, y0, x1, y1))
    try:
        line = focus_line(c)
        line = replace(line, rows=line.rows + y0, centroids=line.centroids + x0)
        result.line = fit_curve(line, order)
    finally:
        if dump_prefix is not None:
            result.dump(dump_prefix)
    return result
