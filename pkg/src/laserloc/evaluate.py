"""Metrics over simulator corpora: line displacement and 3D localization error."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from laserloc.errors import (
    EmptyLineError,
    EvaluationError,
    FitError,
    GeometryError,
    LocalizationError,
)
from laserloc.imagekit import load_image
from laserloc.lle import Centerline, extract_laser_line
from laserloc.scan import ScanParams, ScanResult, detection_roi, line_center, localize, run_stop
from laserloc.triangulate import Calibration, pixel_to_normalized, triangulate_point

log = logging.getLogger(__name__)

RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
SUCCESS_MM = 20.0


# --- metrics -------------------------------------------------------------------

def central_rows(truth_rows, ratio: float) -> np.ndarray:
    """Truth rows inside the centered ``ratio`` fraction of the truth row extent."""
    if not 0 < ratio <= 1:
        raise EvaluationError(f"ratio must lie in (0, 1], got {ratio}")
    rows = np.asarray(truth_rows)
    if rows.size == 0:
        raise EvaluationError("ground truth has no rows")
    lo, hi = float(rows.min()), float(rows.max())
    mid, half = 0.5 * (lo + hi), 0.5 * ratio * (hi - lo)
    sel = rows[(rows >= mid - half) & (rows <= mid + half)]
    if sel.size == 0:
        # extent too short for the ratio to contain a row; fall back to the nearest
        sel = rows[[int(np.argmin(np.abs(rows - mid)))]]
    return sel


def line_displacement(pred: Centerline, truth_rows, truth_cols, ratio: float) -> float:
    """Mean per-row column distance between ``pred`` and truth on the central segment.

    Rows outside the prediction's fitted domain are filled by evaluating the
    polynomial beyond its domain, but only for rows where truth exists.
    """
    truth_rows = np.asarray(truth_rows)
    truth_cols = np.asarray(truth_cols, dtype=float)
    if truth_rows.shape != truth_cols.shape:
        raise EvaluationError("truth rows and columns differ in length")
    if not pred.fitted:
        raise EvaluationError("prediction has no fitted curve")
    rows = central_rows(truth_rows, ratio)
    lookup = dict(zip(truth_rows.tolist(), truth_cols.tolist()))
    truth = np.array([lookup[r] for r in rows.tolist()])
    return float(np.mean(np.abs(pred.evaluate(rows, extrapolate=True) - truth)))


def displacement_coverage(pred: Centerline, truth_rows, ratio: float) -> float:
    """Fraction of the central truth rows that fall inside the prediction's domain."""
    rows = central_rows(truth_rows, ratio)
    lo, hi = pred.domain
    return float(np.mean((rows >= lo) & (rows <= hi)))


def localization_error(result: ScanResult | np.ndarray, truth) -> float:
    """Euclidean 3D error in millimeters."""
    point = result.center_3d if isinstance(result, ScanResult) else np.asarray(result, dtype=float)
    return float(np.linalg.norm(point - np.asarray(truth, dtype=float)) * 1000.0)


# --- per-case evaluation -------------------------------------------------------

@dataclass
class CaseInput:
    """Everything needed to score one scan: stop images, rig state and truth."""

    case_id: str
    distance: float
    occlusion: float
    images: list
    offsets: list
    detection: dict
    cal: Calibration
    marker_3d: np.ndarray
    truth_rows: np.ndarray  # stripe truth of the reference stop
    truth_cols: np.ndarray
    reference: int = 0  # index into images used for displacement

    @classmethod
    def from_case(cls, case, reference_only: bool = False) -> "CaseInput":
        """Render a :class:`laserloc.simulate.Case` in memory.

        ``reference_only`` renders just the reference stop, which is all the
        displacement metric needs.
        """
        ref = case.reference_stop()
        if reference_only:
            rendered, offsets = [case.render_stop(ref)], [case.offsets[ref]]
            ref = 0
        else:
            rendered, offsets = case.render_stops(), list(case.offsets)
        truth = rendered[ref][1]
        return cls(
            case_id=case.case_id,
            distance=case.distance,
            occlusion=case.occlusion,
            images=[img for img, _ in rendered],
            offsets=offsets,
            detection=case.detection,
            cal=case.cal,
            marker_3d=truth.marker_3d,
            truth_rows=truth.visible_rows,
            truth_cols=truth.stripe_center_px,
            reference=ref,
        )

    @classmethod
    def from_dir(cls, case_dir) -> "CaseInput":
        """Load a case written by :func:`laserloc.simulate.write_case`.

        Uses every ``stop_k.png`` when present, otherwise only ``image.png``
        (the reference stop) with its own slide offset.
        """
        with open(os.path.join(case_dir, "truth.json")) as fh:
            doc = json.load(fh)
        offsets = doc["offsets_m"]
        ref = int(doc["reference_stop"])
        stops = [os.path.join(case_dir, f"stop_{k}.png") for k in range(len(offsets))]
        if all(os.path.exists(p) for p in stops):
            images = [load_image(p) for p in stops]
        else:
            images = [load_image(os.path.join(case_dir, "image.png"))]
            offsets, ref = [offsets[ref]], 0
        return cls(
            case_id=doc["case_id"],
            distance=float(doc["distance_m"]),
            occlusion=float(doc["occlusion"]),
            images=images,
            offsets=offsets,
            detection=doc["detection"],
            cal=Calibration.from_degrees(**doc["calibration"]),
            marker_3d=np.array(doc["marker_3d"]),
            truth_rows=np.array(doc["visible_rows"], dtype=np.int64),
            truth_cols=np.array(doc["stripe_center_px"], dtype=float),
            reference=ref,
        )


@dataclass
class CaseRecord:
    case_id: str
    distance: float
    occlusion: float
    status: str = "ok"
    error_mm: float | None = None
    selected: int | None = None
    disp_status: str = "ok"
    disp_px: dict = field(default_factory=dict)  # ratio -> px
    coverage: float | None = None

    @property
    def success(self) -> bool:
        return self.status == "ok" and self.error_mm is not None and self.error_mm < SUCCESS_MM


def evaluate_case(ci: CaseInput, params: ScanParams = ScanParams(), ratios=RATIOS) -> CaseRecord:
    rec = CaseRecord(ci.case_id, ci.distance, ci.occlusion)

    # displacement on the reference stop, same crop the scan uses
    image = ci.images[ci.reference]
    roi = detection_roi(ci.detection, (image.height, image.width), params.roi_margin)
    if len(ci.truth_rows) == 0:
        rec.disp_status = "no_truth"
    else:
        try:
            line = extract_laser_line(image, params.brce, params.noise, roi=roi).line
            rec.disp_px = {r: line_displacement(line, ci.truth_rows, ci.truth_cols, r) for r in ratios}
            rec.coverage = displacement_coverage(line, ci.truth_rows, max(ratios))
        except EmptyLineError:
            rec.disp_status = "empty"
        except FitError:
            rec.disp_status = "fit_failed"

    try:
        result = localize(ci.images, ci.offsets, ci.detection, ci.cal, params)
    except LocalizationError:
        rec.status = "localization_failed"
    except GeometryError:
        rec.status = "geometry_error"
    else:
        rec.selected = result.selected
        rec.error_mm = localization_error(result, ci.marker_3d)
    return rec


def _evaluate_one(args):
    ci, params, ratios = args
    if isinstance(ci, str):
        ci = CaseInput.from_dir(ci)
    return evaluate_case(ci, params, ratios)


def evaluate_cases(cases, params: ScanParams = ScanParams(), ratios=RATIOS, jobs: int = 1) -> list:
    """Evaluate an iterable of :class:`CaseInput` (or case directories), keeping order."""
    work = ((ci, params, ratios) for ci in cases)
    if jobs <= 1:
        return [_evaluate_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_evaluate_one, work, chunksize=4))


# --- aggregation ---------------------------------------------------------------

@dataclass
class DisplacementReport:
    ratios: tuple
    avg: list
    min: list
    max: list
    n_cases: int
    n_failed: int
    mean_coverage: float | None

    def to_dict(self) -> dict:
        return {
            "n_cases": self.n_cases,
            "n_failed": self.n_failed,
            "mean_coverage": self.mean_coverage,
            "rows": [
                {"ratio": r, "avg_px": a, "min_px": lo, "max_px": hi}
                for r, a, lo, hi in zip(self.ratios, self.avg, self.min, self.max)
            ],
        }


@dataclass
class LocalizationReport:
    cells: dict  # (distance, occlusion) -> {"mean_mm", "std_mm", "n", "n_failed", "success_rate"}
    success_rate: float | None
    n_cases: int
    n_failed: int

    def cell(self, distance: float, occlusion: float) -> dict:
        return self.cells[(round(distance, 6), round(occlusion, 6))]

    def to_dict(self) -> dict:
        return {
            "n_cases": self.n_cases,
            "n_failed": self.n_failed,
            "success_threshold_mm": SUCCESS_MM,
            "success_rate": self.success_rate,
            "cells": [
                {"distance_m": d, "occlusion": o, **stats}
                for (d, o), stats in sorted(self.cells.items())
            ],
        }


def aggregate(records, ratios=RATIOS) -> tuple[DisplacementReport, LocalizationReport]:
    ok = [r for r in records if r.disp_status == "ok"]
    cols = {ratio: [r.disp_px[ratio] for r in ok] for ratio in ratios}
    disp = DisplacementReport(
        ratios=tuple(ratios),
        avg=[float(np.mean(cols[q])) if ok else None for q in ratios],
        min=[float(np.min(cols[q])) if ok else None for q in ratios],
        max=[float(np.max(cols[q])) if ok else None for q in ratios],
        n_cases=len(ok),
        n_failed=len(records) - len(ok),
        mean_coverage=float(np.mean([r.coverage for r in ok])) if ok else None,
    )

    cells = {}
    for key in sorted({(round(r.distance, 6), round(r.occlusion, 6)) for r in records}):
        group = [r for r in records if (round(r.distance, 6), round(r.occlusion, 6)) == key]
        errs = np.array([r.error_mm for r in group if r.status == "ok"])
        cells[key] = {
            "mean_mm": float(errs.mean()) if errs.size else None,
            "std_mm": float(errs.std()) if errs.size else None,
            "n": int(errs.size),
            "n_failed": len(group) - int(errs.size),
            "success_rate": sum(r.success for r in group) / len(group),
        }
    n_failed = sum(r.status != "ok" for r in records)
    loc = LocalizationReport(
        cells=cells,
        success_rate=sum(r.success for r in records) / len(records) if records else None,
        n_cases=len(records) - n_failed,
        n_failed=n_failed,
    )
    return disp, loc


def occluded_success_rate(records) -> float | None:
    occluded = [r for r in records if r.occlusion > 0]
    return sum(r.success for r in occluded) / len(occluded) if occluded else None


# --- files ---------------------------------------------------------------------

def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def write_reports(records, out_dir, ratios=RATIOS) -> tuple[DisplacementReport, LocalizationReport]:
    disp, loc = aggregate(records, ratios)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "displacement.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "ratio", "disp_px"])
        for r in records:
            for q in ratios:
                w.writerow([r.case_id, f"{q:.1f}", _fmt(r.disp_px.get(q))])
    with open(os.path.join(out_dir, "localization.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "distance_m", "occlusion", "error_mm", "status"])
        for r in records:
            w.writerow([r.case_id, f"{r.distance:.2f}", f"{r.occlusion:.2f}", _fmt(r.error_mm), r.status])

    summary = {
        "displacement": disp.to_dict(),
        "localization": loc.to_dict(),
        "occluded_success_rate": occluded_success_rate(records),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)

    # one series per occlusion level: distance vs mean/std error
    series = {}
    for (d, o), stats in sorted(loc.cells.items()):
        s = series.setdefault(f"occlusion_{o:g}", {"distance_m": [], "mean_mm": [], "std_mm": []})
        s["distance_m"].append(d)
        s["mean_mm"].append(stats["mean_mm"])
        s["std_mm"].append(stats["std_mm"])
    with open(os.path.join(out_dir, "plot_data.json"), "w") as fh:
        json.dump({"x": "distance_m", "y": "error_mm", "series": series}, fh, indent=2, sort_keys=True)
    return disp, loc


def build_reports(corpus_dir, params: ScanParams = ScanParams(), out_dir=None,
                  jobs: int = 1) -> tuple[DisplacementReport, LocalizationReport]:
    """Evaluate every case listed in ``corpus_dir/manifest.json``."""
    with open(os.path.join(corpus_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    dirs = [os.path.join(corpus_dir, entry["id"]) for entry in manifest["cases"]]
    records = evaluate_cases(dirs, params, jobs=jobs)
    if out_dir is None:
        return aggregate(records)
    return write_reports(records, out_dir)


# --- gates ---------------------------------------------------------------------

def check_gates(summary: dict, gates: dict) -> list[str]:
    """Compare a summary against thresholds; returns human-readable violations.

    Recognized gates: ``disp_avg_at_10_px`` (max), ``disp_non_decreasing``
    (bool), ``success_rate`` (min), ``occluded_success_rate`` (min) and
    ``mean_error_mm`` mapping ``"<distance>/<occlusion>"`` to a max.
    """
    known = {"disp_avg_at_10_px", "disp_non_decreasing", "success_rate",
             "occluded_success_rate", "mean_error_mm"}
    unknown = set(gates) - known
    if unknown:
        raise EvaluationError(f"unknown gates {sorted(unknown)}")
    bad = []
    rows = summary["displacement"]["rows"]
    avgs = [r["avg_px"] for r in rows]
    if "disp_avg_at_10_px" in gates:
        at10 = next((r["avg_px"] for r in rows if abs(r["ratio"] - 0.1) < 1e-9), None)
        if at10 is None or at10 > gates["disp_avg_at_10_px"]:
            bad.append(f"displacement at 10% is {at10} px, limit {gates['disp_avg_at_10_px']}")
    if gates.get("disp_non_decreasing"):
        if None in avgs or any(b < a for a, b in zip(avgs, avgs[1:])):
            bad.append(f"displacement not non-decreasing in ratio: {avgs}")
    for key, value in (("success_rate", summary["localization"]["success_rate"]),
                       ("occluded_success_rate", summary.get("occluded_success_rate"))):
        if key in gates and (value is None or value < gates[key]):
            bad.append(f"{key} is {value}, minimum {gates[key]}")
    cells = {(c["distance_m"], c["occlusion"]): c for c in summary["localization"]["cells"]}
    for name, limit in gates.get("mean_error_mm", {}).items():
        d, o = (float(x) for x in name.split("/"))
        cell = cells.get((round(d, 6), round(o, 6)))
        mean = cell["mean_mm"] if cell else None
        if mean is None or mean > limit:
            bad.append(f"mean error at {name} is {mean} mm, limit {limit}")
    return bad


# --- weight tuning -------------------------------------------------------------

def candidate_features(ci: CaseInput, params: ScanParams = ScanParams()) -> list:
    """Per stop: ``(n_norm, d_norm, error_mm)`` if the stop were chosen, else None."""
    w, h = ci.detection["size"]
    norms = (h, math.hypot(w, h))
    feats = []
    for k, (img, off) in enumerate(zip(ci.images, ci.offsets)):
        cand = run_stop(img, k, off, ci.detection, params)
        if cand.failed:
            feats.append(None)
            continue
        col_row = line_center(cand.line, ci.detection["center"][1])
        try:
            point = triangulate_point(pixel_to_normalized(col_row, ci.cal), ci.cal.at_offset(off))
            err = localization_error(point, ci.marker_3d)
        except GeometryError:
            err = math.inf
        feats.append((*cand.features(norms), err))
    return feats


def _valid(feats):
    return [(k, f) for k, f in enumerate(feats) if f is not None]


def tune_weights(feature_sets, grid=None) -> tuple[tuple[float, float], list]:
    """Cross-validate (w1, w2) on precomputed candidate features.

    Weights are searched on the simplex ``w1 + w2 = 1`` since selection only
    depends on their ratio. The criterion is the fraction of cases within
    :data:`SUCCESS_MM`, then the mean error. Returns the best pair and the
    full table of ``(w1, w2, success_rate, mean_mm)``.
    """
    grid = np.round(np.linspace(0.0, 1.0, 21), 6) if grid is None else grid
    table = []
    for w2 in grid:
        w1 = 1.0 - float(w2)
        errs = []
        for feats in feature_sets:
            # same ordering as scan.select_best: confidence, distance, stop index
            ok = [(-(w1 * n - w2 * d), d, k, e) for k, (n, d, e) in _valid(feats)]
            errs.append(min(ok)[3] if ok else math.inf)
        errs = np.array(errs)
        finite = errs[np.isfinite(errs)]
        table.append((w1, float(w2), float(np.mean(errs < SUCCESS_MM)) if errs.size else 0.0,
                      float(finite.mean()) if finite.size else math.inf))
    best = max(table, key=lambda t: (t[2], -t[3]))
    return (best[0], best[1]), table


def cross_validate_weights(train, test, params: ScanParams = ScanParams(), grid=None) -> dict:
    """Tune on ``train`` cases and report the chosen weights' score on ``test``."""
    train_f = [candidate_features(ci, params) for ci in train]
    test_f = [candidate_features(ci, params) for ci in test]
    (w1, w2), table = tune_weights(train_f, grid)
    _, test_table = tune_weights(test_f, [w2])
    _, _, rate, mean = test_table[0]
    return {"w1": w1, "w2": w2, "train": table, "test": {"success_rate": rate, "mean_mm": mean}}
