"""Synthetic laser-scan scenes with analytic ground truth.

A sphere "apple" in front of a flat background is viewed by a pinhole camera
and lit by the laser plane described in :mod:`laserloc.triangulate`.
Rectangular occluders in front of the apple hide it from the camera and
shadow the laser. Ground truth is derived from the geometry alone.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from laserloc.imagekit import RasterImage, save_image
from laserloc.triangulate import Calibration

MANIFEST_SCHEMA = "laserloc-corpus/1"

APPLE_RGB = np.array([0.85, 0.20, 0.15])
BACKGROUND_RGB = np.array([0.30, 0.42, 0.25])
OCCLUDER_RGB = np.array([0.12, 0.32, 0.10])
LASER_BLEED = 0.12  # fraction of stripe energy leaking into green/blue


def default_calibration() -> Calibration:
    """Rig used by the simulator: 640x480, mid stroke aimed at ~1.3 m."""
    return Calibration.from_degrees(
        baseline_l_m=0.30, alpha_deg=8.9, beta_deg=0.0,
        fx_px=1200.0, fy_px=1200.0, cx_px=319.5, cy_px=239.5,
    )


def lux_to_ambient(lux: float) -> float:
    """Linear map 1000 lux -> 40, 6500 lux -> 160."""
    return 40.0 + (lux - 1000.0) * (120.0 / 5500.0)


@dataclass(frozen=True)
class Occluder:
    """Camera-facing rectangle at depth ``z``, rotated by ``angle`` about its center.

    Extents are half-sizes in meters; ``coverage`` records the fraction of
    the apple it was built to hide.
    """

    cx: float
    cy: float
    half_width: float
    half_height: float
    z: float
    angle: float = 0.0
    coverage: float = 0.0

    def contains(self, x, y):
        dx, dy = x - self.cx, y - self.cy
        ca, sa = math.cos(self.angle), math.sin(self.angle)
        lx = ca * dx + sa * dy
        ly = -sa * dx + ca * dy
        return (np.abs(lx) <= self.half_width) & (np.abs(ly) <= self.half_height)


@dataclass
class Exposure:
    stripe_peak: float = 180.0
    ambient: float = 80.0
    saturation_blobs: list = field(default_factory=list)  # (col, row, radius) in px
    speckles: int = 0


@dataclass
class Scene:
    apple_center: tuple
    apple_radius: float = 0.04
    occluders: list = field(default_factory=list)
    background_depth: float | None = 6.0
    exposure: Exposure = field(default_factory=Exposure)
    noise_sigma: float = 0.0
    stripe_sigma: float = 1.5
    image_size: tuple = (640, 480)

    def __post_init__(self):
        c = np.asarray(self.apple_center, dtype=float)
        if c[2] - self.apple_radius <= 0.1:
            raise ValueError("apple must lie in front of the camera")
        if not self.exposure.stripe_peak > self.exposure.ambient:
            raise ValueError("stripe_peak must exceed ambient")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["apple_center"] = [float(v) for v in self.apple_center]
        return d


@dataclass
class GroundTruth:
    apple_center_3d: np.ndarray
    marker_3d: np.ndarray
    center_px: tuple
    radius_px: float
    visible_rows: np.ndarray
    stripe_center_px: np.ndarray
    stripe_points: np.ndarray

    def to_dict(self) -> dict:
        return {
            "apple_center_3d": self.apple_center_3d.tolist(),
            "marker_3d": self.marker_3d.tolist(),
            "center_px": [float(v) for v in self.center_px],
            "radius_px": float(self.radius_px),
            "visible_rows": self.visible_rows.tolist(),
            "stripe_center_px": self.stripe_center_px.tolist(),
        }


def project(point, cal: Calibration):
    x, y, z = point
    return cal.cx + cal.fx * x / z, cal.cy + cal.fy * y / z


def marker_point(center, radius) -> np.ndarray:
    """Sphere point facing the camera along the ray through the center."""
    c = np.asarray(center, dtype=float)
    return c * (1.0 - radius / np.linalg.norm(c))


def _laser_rays(cal: Calibration, rows):
    """Per-row ray (origin, direction) inside the laser plane and the row's viewing plane."""
    n, _ = cal.plane()
    origin = cal.laser_origin()
    v = (rows - cal.cy) / cal.fy
    row_normals = np.stack([np.zeros_like(v), np.ones_like(v), -v], axis=-1)
    dirs = np.cross(n[None, :], row_normals)
    dirs *= np.sign(dirs[:, 2:3])
    return origin, dirs


def _occluded_segment(occluders, a, b):
    """True where the segment a -> b crosses any occluder (a, b are (N, 3))."""
    hit = np.zeros(len(b), dtype=bool)
    for occ in occluders:
        dz = b[:, 2] - a[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (occ.z - a[:, 2]) / dz
        cross = (s > 0) & (s < 1)
        px = a[:, 0] + s * (b[:, 0] - a[:, 0])
        py = a[:, 1] + s * (b[:, 1] - a[:, 1])
        hit |= cross & occ.contains(px, py)
    return hit


def stripe_truth(scene: Scene, cal: Calibration):
    """Analytic stripe on the apple for every image row.

    Returns a dict of per-row arrays: ``hit`` (laser reaches the apple first),
    ``visible`` (lit, unoccluded, camera-facing, inside the image), column,
    3D point and the cosine of the laser incidence angle.
    """
    width, height = scene.image_size
    rows = np.arange(height, dtype=float)
    origin, dirs = _laser_rays(cal, rows)
    c = np.asarray(scene.apple_center, dtype=float)
    r = scene.apple_radius

    oc = origin - c
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2.0 * dirs @ oc
    cc = oc @ oc - r * r
    disc = b * b - 4 * a * cc
    hit = disc >= 0
    t = np.full(height, np.nan)
    t[hit] = (-b[hit] - np.sqrt(disc[hit])) / (2 * a[hit])
    hit &= t > 0
    pts = origin[None, :] + t[:, None] * dirs

    normals = (pts - c) / r
    facing = np.einsum("ij,ij->i", normals, pts) < 0
    to_laser = origin[None, :] - pts
    to_laser /= np.linalg.norm(to_laser, axis=1, keepdims=True)
    incidence = np.einsum("ij,ij->i", normals, to_laser)

    with np.errstate(invalid="ignore", divide="ignore"):
        cols = cal.cx + cal.fx * pts[:, 0] / pts[:, 2]
    zeros = np.zeros_like(pts)
    origins = np.broadcast_to(origin, pts.shape)
    hidden = _occluded_segment(scene.occluders, zeros, pts)
    shadowed = _occluded_segment(scene.occluders, origins, pts)

    visible = hit & facing & ~hidden & ~shadowed & (cols >= 0) & (cols <= width - 1)
    visible &= incidence > 0
    return {
        "hit": hit,
        "visible": visible,
        "cols": cols,
        "points": pts,
        "incidence": incidence,
        "origin": origin,
        "dirs": dirs,
    }


def ground_truth(scene: Scene, cal: Calibration, slide_offset: float = 0.0) -> GroundTruth:
    cal = cal.at_offset(slide_offset)
    st = stripe_truth(scene, cal)
    rows = np.flatnonzero(st["visible"])
    c = np.asarray(scene.apple_center, dtype=float)
    return GroundTruth(
        apple_center_3d=c,
        marker_3d=marker_point(c, scene.apple_radius),
        center_px=project(c, cal),
        radius_px=cal.fx * scene.apple_radius / math.sqrt(c[2] ** 2 - scene.apple_radius**2),
        visible_rows=rows,
        stripe_center_px=st["cols"][rows],
        stripe_points=st["points"][rows],
    )


def scene_layers(scene: Scene, cal: Calibration):
    """Laser-independent part of a render: shaded image and per-pixel class masks.

    Depends only on the scene and the intrinsics, so one result can be
    shared by every slide stop of a scan.
    """
    width, height = scene.image_size
    ex = scene.exposure
    u = ((np.arange(width) - cal.cx) / cal.fx).astype(np.float32)
    v = ((np.arange(height) - cal.cy) / cal.fy).astype(np.float32)
    uu, vv = np.meshgrid(u, v)

    # ray (u, v, 1) against the sphere; z of the hit equals the ray parameter
    c = np.asarray(scene.apple_center, dtype=float)
    r = scene.apple_radius
    a = uu * uu + vv * vv + 1.0
    b = -2.0 * (uu * c[0] + vv * c[1] + c[2])
    disc = b * b - 4.0 * a * (c @ c - r * r)
    apple = disc > 0
    depth = np.full(uu.shape, np.inf, dtype=np.float32)
    depth[apple] = (-b[apple] - np.sqrt(disc[apple])) / (2.0 * a[apple])
    apple &= depth > 0

    far = np.inf if scene.background_depth is None else scene.background_depth
    occluded = np.zeros(uu.shape, dtype=bool)
    for occ in scene.occluders:
        in_front = occ.z < np.where(apple, depth, far)
        occluded |= in_front & occ.contains(uu * occ.z, vv * occ.z)
    apple &= ~occluded
    background = ~apple & ~occluded

    img = np.empty((height, width, 3), dtype=np.float32)
    # Lambertian shading with the light at the camera
    ua, va, da = uu[apple], vv[apple], depth[apple]
    nx, ny, nz = (ua * da - c[0]) / r, (va * da - c[1]) / r, (da - c[2]) / r
    shade = np.clip(-(nx * ua + ny * va + nz) / np.sqrt(a[apple]), 0.0, 1.0)
    img[apple] = APPLE_RGB * ex.ambient * (0.35 + 0.65 * shade)[:, None]
    texture = 1.0 + 0.08 * np.sin(uu[background] * 37.0) * np.cos(vv[background] * 23.0)
    img[background] = BACKGROUND_RGB * ex.ambient * texture[:, None]
    img[occluded] = OCCLUDER_RGB * ex.ambient
    return img, apple, background


def render(scene: Scene, cal: Calibration, slide_offset: float = 0.0, rng_seed: int = 0,
           layers=None):
    """Render one laser stop; returns ``(RasterImage, GroundTruth)``.

    ``layers`` may carry a precomputed :func:`scene_layers` result.
    """
    if layers is None:
        layers = scene_layers(scene, cal)
    base, apple, background = layers
    cal = cal.at_offset(slide_offset)
    width, height = scene.image_size
    ex = scene.exposure
    rng = np.random.default_rng(rng_seed)
    img = base.copy()

    st = stripe_truth(scene, cal)
    cols = np.arange(width)
    two_s2 = 2.0 * scene.stripe_sigma**2
    reach = int(math.ceil(4 * scene.stripe_sigma))
    for row in np.flatnonzero(st["visible"]):
        center = st["cols"][row]
        amp = ex.stripe_peak * st["incidence"][row]
        lo, hi = max(int(center) - reach, 0), min(int(center) + reach + 2, width)
        seg = slice(lo, hi)
        prof = amp * np.exp(-((cols[seg] - center) ** 2) / two_s2) * apple[row, seg]
        img[row, seg, 0] += prof
        img[row, seg, 1:] += LASER_BLEED * prof[:, None]

    if scene.background_depth is not None:
        _render_background_stripe(img, scene, cal, st, background, two_s2, reach)

    np.clip(img, 0, 255, out=img)
    if scene.noise_sigma > 0:
        img += np.float32(scene.noise_sigma) * rng.standard_normal(img.shape, dtype=np.float32)
    for _ in range(ex.speckles):
        row, col = rng.integers(0, height), rng.integers(0, width - 1)
        img[row, col : col + int(rng.integers(1, 3)), 0] += rng.uniform(120, 200)
    for bc, br, rad in ex.saturation_blobs:
        x0, x1 = max(int(bc - rad - 3), 0), min(int(bc + rad + 4), width)
        y0, y1 = max(int(br - rad - 3), 0), min(int(br + rad + 4), height)
        if x1 <= x0 or y1 <= y0:
            continue
        dist = np.hypot(cols[None, x0:x1] - bc, np.arange(y0, y1)[:, None] - br)
        weight = np.clip((rad + 2.0 - dist) / 2.0, 0.0, 1.0)[..., None]
        patch = img[y0:y1, x0:x1]
        img[y0:y1, x0:x1] = patch * (1 - weight) + 255.0 * weight

    np.rint(img, out=img)
    np.clip(img, 0, 255, out=img)
    return RasterImage(img.astype(np.uint8)), ground_truth(scene, cal, slide_offset)


def _render_background_stripe(img, scene, cal, st, background, two_s2, reach):
    width, height = scene.image_size
    origin, dirs = st["origin"], st["dirs"]
    zb = scene.background_depth
    miss = ~st["hit"]
    t = (zb - origin[2]) / dirs[:, 2]
    pts = origin[None, :] + t[:, None] * dirs
    shadowed = _occluded_segment(scene.occluders, np.broadcast_to(origin, pts.shape), pts)
    cols_bg = cal.cx + cal.fx * pts[:, 0] / pts[:, 2]
    cols = np.arange(width)
    amp = 0.6 * scene.exposure.stripe_peak
    for row in np.flatnonzero(miss & ~shadowed & (cols_bg > -reach) & (cols_bg < width + reach)):
        center = cols_bg[row]
        lo, hi = max(int(center) - reach, 0), min(int(center) + reach + 2, width)
        if hi <= lo:
            continue
        seg = slice(lo, hi)
        prof = amp * np.exp(-((cols[seg] - center) ** 2) / two_s2) * background[row, seg]
        img[row, seg, 0] += prof
        img[row, seg, 1:] += LASER_BLEED * prof[:, None]


# --- occluders ---------------------------------------------------------------

def _segment_fraction(delta: float) -> float:
    """Fraction of a unit disk with x <= delta."""
    delta = min(max(delta, -1.0), 1.0)
    cap = math.acos(delta) - delta * math.sqrt(1.0 - delta * delta)
    return 1.0 - cap / math.pi


SIDE_ANGLES = {"left": 0.0, "top": 0.5 * math.pi, "right": math.pi, "bottom": 1.5 * math.pi}


def half_plane_occluder(center, radius, cal: Calibration, side, coverage: float = 0.5,
                        gap: float = 0.01) -> Occluder:
    """Rectangle hiding ``coverage`` of the apple's image disk.

    ``side`` is left/right/top/bottom or an angle in radians giving the
    direction (in the image, y down) from the occluded side toward the
    visible side. The rectangle sits ``gap`` meters in front of the apple's
    nearest point and extends far past the apple on every other edge.
    """
    angle = SIDE_ANGLES[side] if isinstance(side, str) else float(side)
    c = np.asarray(center, dtype=float)
    lo, hi = -1.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _segment_fraction(mid) < coverage:
            lo = mid
        else:
            hi = mid
    delta = 0.5 * (lo + hi)
    z = c[2] - radius - gap
    # work in normalized image units, then scale to the occluder depth
    rho = radius / math.sqrt(c[2] ** 2 - radius**2)
    big = 4 * rho
    nx, ny = math.cos(angle), math.sin(angle)
    offset = delta * rho - big
    ru, rv = c[0] / c[2] + offset * nx, c[1] / c[2] + offset * ny
    return Occluder(ru * z, rv * z, big * z, big * z, z, angle, coverage)


# --- corpus ------------------------------------------------------------------

@dataclass
class CorpusSpec:
    n_cases: int = 300
    distances: tuple = (1.0, 1.2, 1.4, 1.6)
    occlusions: tuple = (0.0, 0.5)
    lux_range: tuple = (1000.0, 6500.0)
    blob_lux: float = 4000.0
    noise_sigma: float = 3.0
    speckles: int = 25
    stripe_peak: float = 180.0
    apple_radius: float = 0.04
    rough_sigma_m: float = 0.01
    detector_sigma_px: float = 1.5
    write_stops: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown corpus keys {sorted(unknown)}")
        d = dict(d)
        for key in ("distances", "occlusions", "lux_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class Case:
    """One scan scenario: a scene plus what the rig knows about it."""

    case_id: str
    distance: float
    occlusion: float
    lux: float
    scene: Scene
    cal: Calibration
    offsets: list
    detection: dict  # {"center": [col, row], "size": [w, h]}
    rough_center: np.ndarray
    seed: int

    def render_stop(self, k: int, layers=None):
        return render(self.scene, self.cal, self.offsets[k], rng_seed=self.seed * 7 + k,
                      layers=layers)

    def render_stops(self):
        layers = scene_layers(self.scene, self.cal)
        return [self.render_stop(k, layers) for k in range(len(self.offsets))]

    def truth(self, k: int = 2) -> GroundTruth:
        return ground_truth(self.scene, self.cal, self.offsets[k])

    def reference_stop(self, truths=None) -> int:
        """Stop whose stripe covers the most apple rows (lowest index on ties)."""
        truths = truths or [self.truth(k) for k in range(len(self.offsets))]
        return int(np.argmax([len(t.visible_rows) for t in truths]))


def make_case(spec: CorpusSpec, seed: int, index: int, cal: Calibration | None = None) -> Case:
    from laserloc.scan import plan_stops

    cal = cal or default_calibration()
    rng = np.random.default_rng([seed, index])
    distance = spec.distances[index % len(spec.distances)]
    occlusion = spec.occlusions[(index // len(spec.distances)) % len(spec.occlusions)]
    lux = float(rng.uniform(*spec.lux_range))
    ambient = lux_to_ambient(lux)

    # keep the apple inside the band the slide can sweep at this depth
    x_mid = (distance * math.sin(cal.alpha) - cal.baseline_L) / math.cos(cal.alpha) + 0.10
    center = np.array([
        x_mid + rng.uniform(-0.03, 0.03),
        rng.uniform(-0.04, 0.04),
        distance,
    ])
    r = spec.apple_radius
    center_px = project(center, cal)
    radius_px = cal.fx * r / math.sqrt(distance**2 - r**2)

    occluders = []
    if occlusion > 0:
        side = float(rng.uniform(0.0, 2.0 * math.pi))
        occluders.append(half_plane_occluder(center, r, cal, side, occlusion))

    blobs = []
    if lux > spec.blob_lux:
        for _ in range(int(rng.integers(1, 3))):
            ang = rng.uniform(0, 2 * math.pi)
            dist = rng.uniform(0.3, 1.6) * radius_px
            blobs.append((
                float(center_px[0] + dist * math.cos(ang)),
                float(center_px[1] + dist * math.sin(ang)),
                float(rng.uniform(0.15, 0.35) * radius_px),
            ))

    scene = Scene(
        apple_center=tuple(float(v) for v in center),
        apple_radius=r,
        occluders=occluders,
        exposure=Exposure(
            stripe_peak=spec.stripe_peak,
            ambient=ambient,
            saturation_blobs=blobs,
            speckles=spec.speckles,
        ),
        noise_sigma=spec.noise_sigma,
    )
    rough = center + rng.normal(0.0, spec.rough_sigma_m, 3)
    offsets = plan_stops(rough, cal)
    size = 2.0 * radius_px * 1.15
    detection = {
        "center": [float(center_px[0] + rng.normal(0, spec.detector_sigma_px)),
                   float(center_px[1] + rng.normal(0, spec.detector_sigma_px))],
        "size": [float(size), float(size)],
    }
    return Case(
        case_id=f"{index:05d}",
        distance=float(distance),
        occlusion=float(occlusion),
        lux=lux,
        scene=scene,
        cal=cal,
        offsets=[float(o) for o in offsets],
        detection=detection,
        rough_center=rough,
        seed=int(np.random.SeedSequence([seed, index]).generate_state(1)[0]),
    )


def iter_cases(spec: CorpusSpec, seed: int, cal: Calibration | None = None):
    for k in range(spec.n_cases):
        yield make_case(spec, seed, k, cal)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _case_truth_doc(case: Case, truths) -> dict:
    ref = case.reference_stop(truths)
    ref_truth = truths[ref]
    return {
        "case_id": case.case_id,
        "distance_m": case.distance,
        "occlusion": case.occlusion,
        "lux": case.lux,
        "apple_center_3d": ref_truth.apple_center_3d.tolist(),
        "marker_3d": ref_truth.marker_3d.tolist(),
        "center_px": [float(v) for v in ref_truth.center_px],
        "visible_rows": ref_truth.visible_rows.tolist(),
        "stripe_center_px": ref_truth.stripe_center_px.tolist(),
        "offsets_m": case.offsets,
        "reference_stop": ref,
        "detection": case.detection,
        "rough_center_3d": case.rough_center.tolist(),
        "stops": [
            {"offset_m": off, "visible_rows": t.visible_rows.tolist(),
             "stripe_center_px": t.stripe_center_px.tolist()}
            for off, t in zip(case.offsets, truths)
        ],
        "scene": case.scene.to_dict(),
        "calibration": case.cal.to_dict(),
    }


def write_case(case: Case, out_dir, write_stops: bool = True) -> dict:
    case_dir = os.path.join(out_dir, case.case_id)
    os.makedirs(case_dir, exist_ok=True)
    truths = [case.truth(k) for k in range(len(case.offsets))]
    ref = case.reference_stop(truths)
    stops = range(len(case.offsets)) if write_stops else [ref]
    layers = scene_layers(case.scene, case.cal)
    for k in stops:
        img, _ = case.render_stop(k, layers)
        if k == ref:
            save_image(img, os.path.join(case_dir, "image.png"))
        if write_stops:
            save_image(img, os.path.join(case_dir, f"stop_{k}.png"))
    with open(os.path.join(case_dir, "truth.json"), "w") as fh:
        json.dump(_case_truth_doc(case, truths), fh, indent=1)
    return {
        "id": case.case_id,
        "distance_m": case.distance,
        "occlusion": case.occlusion,
        "lux": round(case.lux, 6),
        "sha256": _sha256(os.path.join(case_dir, "image.png")),
    }


def make_corpus(spec: CorpusSpec, seed: int, out_dir, cal: Calibration | None = None) -> dict:
    """Render ``spec.n_cases`` scenes to ``out_dir``; returns the manifest."""
    cal = cal or default_calibration()
    os.makedirs(out_dir, exist_ok=True)
    entries = [write_case(case, out_dir, spec.write_stops) for case in iter_cases(spec, seed, cal)]
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "seed": seed,
        "spec": spec.to_dict(),
        "calibration": cal.to_dict(),
        "cases": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest
