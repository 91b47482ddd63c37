import json
import math

import numpy as np
import pytest

from laserloc.imagekit import load_image
from laserloc.scan import plan_stops
from laserloc.simulate import (
    CorpusSpec,
    Exposure,
    Scene,
    default_calibration,
    ground_truth,
    half_plane_occluder,
    lux_to_ambient,
    make_corpus,
    render,
)
from laserloc.triangulate import line_to_3d
from laserloc.lle import Centerline

CAL = default_calibration()


def on_plane(z, slide=0.1, y=0.0):
    """Apple center whose x puts it on the laser plane of ``slide`` at depth ``z``."""
    c = CAL.at_offset(slide)
    x = (z * math.sin(c.alpha) - c.effective_baseline) / math.cos(c.alpha)
    return (x, y, z)


def test_scene_invariants():
    with pytest.raises(ValueError):
        Scene(apple_center=(0.0, 0.0, 0.12))
    with pytest.raises(ValueError):
        Scene(apple_center=(0.0, 0.0, 1.0), exposure=Exposure(stripe_peak=50, ambient=80))


def test_lux_map():
    assert lux_to_ambient(1000) == 40 and lux_to_ambient(6500) == 160


def test_render_deterministic():
    scene = Scene(apple_center=on_plane(1.2), noise_sigma=4.0,
                  exposure=Exposure(speckles=10, saturation_blobs=[(300.0, 200.0, 6.0)]))
    a, _ = render(scene, CAL, 0.1, rng_seed=11)
    b, _ = render(scene, CAL, 0.1, rng_seed=11)
    c, _ = render(scene, CAL, 0.1, rng_seed=12)
    assert a.data == b.data
    assert a.data != c.data


def test_truth_symmetric_about_center_row():
    scene = Scene(apple_center=on_plane(1.0))
    t = ground_truth(scene, CAL, 0.1)
    rows = t.visible_rows
    assert rows.size > 50
    lookup = dict(zip(rows.tolist(), t.stripe_center_px))
    # cy = 239.5: row 239 - k mirrors row 240 + k
    pairs = [(239 - k, 240 + k) for k in range(40) if 239 - k in lookup and 240 + k in lookup]
    assert len(pairs) > 30
    for a, b in pairs:
        assert abs(lookup[a] - lookup[b]) < 1e-9


def test_top_occluder_leaves_lower_half():
    center = on_plane(1.2)
    occ = half_plane_occluder(center, 0.04, CAL, "top", coverage=0.5)
    t = ground_truth(Scene(apple_center=center, occluders=[occ]), CAL, 0.1)
    cy = CAL.cy + CAL.fy * center[1] / center[2]
    assert t.visible_rows.size > 10
    assert t.visible_rows.min() >= cy - 1


@pytest.mark.parametrize("side", ["left", "right", "top", "bottom", 0.7, 4.0])
def test_half_plane_coverage(side):
    center = np.array(on_plane(1.4, y=0.02))
    occ = half_plane_occluder(center, 0.04, CAL, side, coverage=0.5)
    # fraction of the apple's image disc hidden, sampled on a grid
    cu, cv = center[0] / center[2], center[1] / center[2]
    r = 0.04 / math.sqrt(center[2] ** 2 - 0.04**2)
    g = np.linspace(-r, r, 401)
    uu, vv = np.meshgrid(cu + g, cv + g)
    disc = (uu - cu) ** 2 + (vv - cv) ** 2 <= r * r
    hidden = occ.contains(uu * occ.z, vv * occ.z) & disc
    assert abs(hidden.sum() / disc.sum() - 0.5) < 0.01


def test_noise_does_not_change_truth():
    base = Scene(apple_center=on_plane(1.0))
    noisy = Scene(apple_center=on_plane(1.0), noise_sigma=8.0, exposure=Exposure(speckles=30))
    _, t0 = render(base, CAL, 0.1)
    i1, t1 = render(noisy, CAL, 0.1, rng_seed=4)
    assert np.array_equal(t0.visible_rows, t1.visible_rows)
    assert np.array_equal(t0.stripe_center_px, t1.stripe_center_px)


def test_render_truth_matches_requested_stop():
    scene = Scene(apple_center=on_plane(1.2))
    for s in (0.08, 0.1, 0.12):
        _, t = render(scene, CAL, s)
        want = ground_truth(scene, CAL, s)
        assert np.array_equal(t.stripe_center_px, want.stripe_center_px)


def test_plane_missing_apple_gives_empty_truth():
    img, t = render(Scene(apple_center=(0.4, 0.0, 1.0)), CAL, 0.0)
    assert t.visible_rows.size == 0 and img.width == 640


@pytest.mark.parametrize("z", [1.0, 1.6])
def test_argmax_matches_truth(z):
    img, t = render(Scene(apple_center=on_plane(z)), CAL, 0.1)
    red = img.pixels[:, :, 0].astype(float)
    errs = []
    for row, col in zip(t.visible_rows, t.stripe_center_px):
        j = int(np.argmax(red[row, int(col) - 4:int(col) + 5])) + int(col) - 4
        a, b, c = red[row, j - 1:j + 2]
        denom = a - 2 * b + c
        sub = j + (0.5 * (a - c) / denom if denom != 0 else 0.0)
        errs.append(abs(sub - col))
    assert max(errs) <= 0.1


@pytest.mark.parametrize("z", [1.0, 1.2, 1.4, 1.6])
def test_loop_closure_keystone(z):
    """Analytic stripe centers triangulate back onto the sphere surface."""
    center = np.array(on_plane(z, y=0.01))
    scene = Scene(apple_center=tuple(center))
    for slide in (0.09, 0.1, 0.11):
        t = ground_truth(scene, CAL, slide)
        assert t.visible_rows.size > 20
        line = Centerline(rows=t.visible_rows, centroids=t.stripe_center_px)
        rows, pts = line_to_3d(line, CAL, slide_offset=slide, use_fit=False)
        assert rows.size == t.visible_rows.size
        radial = np.abs(np.linalg.norm(pts - center, axis=1) - 0.04)
        assert radial.max() < 1e-6
        assert np.abs(pts - t.stripe_points).max() < 1e-6


def test_plan_stops_hits_apple_with_exact_center():
    for z in (1.0, 1.3, 1.6):
        center = on_plane(z, slide=0.1)
        offsets = plan_stops(center, CAL)
        assert math.isclose(offsets[2], 0.1, abs_tol=1e-12)
        t = ground_truth(Scene(apple_center=center), CAL, offsets[2])
        col_center = CAL.cx + CAL.fx * center[0] / center[2]
        assert abs(t.stripe_center_px[len(t.visible_rows) // 2] - col_center) < 15


def test_corpus_deterministic_and_stratified(tmp_path):
    spec = CorpusSpec(n_cases=8, write_stops=False)
    m1 = make_corpus(spec, 3, tmp_path / "a")
    m2 = make_corpus(spec, 3, tmp_path / "b")
    assert m1 == m2
    assert len(m1["cases"]) == 8
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    per_distance = {}
    for e in m1["cases"]:
        per_distance[e["distance_m"]] = per_distance.get(e["distance_m"], 0) + 1
    assert sorted(per_distance.values()) == [2, 2, 2, 2]
    assert {e["occlusion"] for e in m1["cases"]} == {0.0, 0.5}
    doc = json.loads((tmp_path / "a" / m1["cases"][0]["id"] / "truth.json").read_text())
    assert len(doc["visible_rows"]) == len(doc["stripe_center_px"])
    img = load_image(tmp_path / "a" / m1["cases"][0]["id"] / "image.png")
    assert img.channels == 3


def test_corpus_seed_changes_content(tmp_path):
    spec = CorpusSpec(n_cases=4, write_stops=False)
    a = make_corpus(spec, 1, tmp_path / "a")
    b = make_corpus(spec, 2, tmp_path / "b")
    assert [e["sha256"] for e in a["cases"]] != [e["sha256"] for e in b["cases"]]


def test_corpus_spec_rejects_unknown():
    with pytest.raises(ValueError):
        CorpusSpec.from_dict({"n_cases": 3, "colour": "red"})
    assert CorpusSpec.from_dict(CorpusSpec().to_dict()) == CorpusSpec()
