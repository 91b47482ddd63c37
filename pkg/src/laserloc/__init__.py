"""Laser-camera fruit localization: line extraction, triangulation and scanning."""

from laserloc.imagekit import RasterImage, load_image, save_image, red_channel
from laserloc.lle import (
    BrceParams,
    Centerline,
    NoiseParams,
    brce_detect,
    extract_laser_line,
    fit_curve,
    focus_line,
    remove_noise,
)
from laserloc.scan import ScanParams, ScanResult, localize, plan_stops
from laserloc.triangulate import (
    Calibration,
    line_to_3d,
    normalized_to_pixel,
    pixel_to_normalized,
    triangulate_point,
)

__version__ = "0.1.0"

__all__ = [
    "BrceParams",
    "Calibration",
    "Centerline",
    "NoiseParams",
    "RasterImage",
    "ScanParams",
    "ScanResult",
    "brce_detect",
    "extract_laser_line",
    "fit_curve",
    "focus_line",
    "line_to_3d",
    "localize",
    "load_image",
    "normalized_to_pixel",
    "pixel_to_normalized",
    "plan_stops",
    "red_channel",
    "remove_noise",
    "save_image",
    "triangulate_point",
]
