import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ffkit.edges import EdgeMap
from ffkit.geometry import PointCloud
from ffkit.metrics import (EvalParams, MetricsReport, chamfer, edge_f1, evaluate, geometry_iou_recall, l_color_depth,
                           l_geo, nearest_distances, ssim)
from ffkit.renderer import RenderedFrame, look_at
from ffkit.scene import GridMeta, Scene, new_scene
from ffkit.synthetic import sphere_center, sphere_scene

import expected
import oracles


def grid_scene(tsdf, known=None):
    tsdf = np.asarray(tsdf, np.float32)
    known = np.ones(tsdf.shape, bool) if known is None else known
    return Scene(GridMeta(tsdf.shape), tsdf, np.zeros(tsdf.shape + (3,), np.uint8),
                 np.zeros(tsdf.shape, bool), known)


def frame(color, depth, valid=None):
    h, w = depth.shape
    valid = np.ones((h, w), bool) if valid is None else valid
    return RenderedFrame(np.asarray(color, np.uint8), np.asarray(depth, float), np.zeros((h, w, 3)), valid)


# ---------------------------------------------------------------- IoU / recall

def test_iou_identity(sphere):
    assert geometry_iou_recall(sphere, sphere) == (1.0, 1.0)


def test_iou_disjoint():
    a = np.full((10, 10, 10), 3.0)
    b = a.copy()
    a[:2] = 0
    b[5:7] = 0
    assert geometry_iou_recall(grid_scene(a), grid_scene(b)) == (0.0, 0.0)


def test_iou_constructed_counts():
    t = np.full((20, 20, 20), 3.0)
    p = t.copy()
    flat_t = t.reshape(-1)
    flat_p = p.reshape(-1)
    flat_t[:100] = 0.5
    flat_p[50:150] = -0.5
    iou, rec = geometry_iou_recall(grid_scene(p), grid_scene(t))
    assert iou == pytest.approx(50 / 150, abs=1e-12) and rec == 0.5


def test_iou_observed_region_only():
    t = np.full((6, 6, 6), 3.0)
    p = t.copy()
    p[0] = 0  # prediction claims surface where the target is unobserved
    known = np.ones(t.shape, bool)
    known[0] = False
    t[3] = 0
    p[3] = 0
    assert geometry_iou_recall(grid_scene(p), grid_scene(t, known)) == (1.0, 1.0)


def test_iou_empty_target_defined_as_one():
    s = grid_scene(np.full((4, 4, 4), 3.0))
    assert geometry_iou_recall(s, s) == (1.0, 1.0)


def test_iou_errors():
    a, b = grid_scene(np.zeros((4, 4, 4))), grid_scene(np.zeros((4, 4, 5)))
    with pytest.raises(ValueError, match="grid mismatch"):
        geometry_iou_recall(a, b)
    with pytest.raises(ValueError):
        geometry_iou_recall(a, a, 0)


def test_iou_equals_one_iff_sets_equal():
    rng = np.random.default_rng(0)
    t = rng.uniform(-3, 3, (8, 8, 8))
    p = t.copy()
    p[0, 0, 0] = 0.0 if abs(t[0, 0, 0]) > 1 else 2.5
    iou, rec = geometry_iou_recall(grid_scene(p), grid_scene(t))
    assert iou < 1


# ---------------------------------------------------------------- chamfer

def test_chamfer_identity_and_single_pair():
    pts = np.random.default_rng(0).random((50, 3))
    assert chamfer(PointCloud(pts), PointCloud(pts)) == 0.0
    assert chamfer(PointCloud([[0, 0, 0]]), PointCloud([[0.03, 0, 0]])) == pytest.approx(3.0, abs=1e-12)


def test_chamfer_translated_cloud():
    rng = np.random.default_rng(1)
    a = rng.random((100, 3))
    a = a * 10  # spread points far apart relative to the shift
    b = a + np.array([0.01, 0.02, 0.02])
    got = chamfer(a, b)
    assert got == pytest.approx(3.0, abs=1e-9)
    assert got == pytest.approx(oracles.chamfer_cm(a, b), abs=1e-12)


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a, b = rng.random((300, 3)), rng.random((250, 3))
        d, i = nearest_distances(a, b)
        bd, bi = oracles.nn_brute(a, b)
        assert np.array_equal(i, bi)
        np.testing.assert_allclose(d, bd, rtol=0, atol=1e-15)


@given(arrays(np.float64, (12, 3), elements=st.floats(-1, 1)), arrays(np.float64, (9, 3), elements=st.floats(-1, 1)))
@settings(max_examples=50, deadline=None)
def test_chamfer_symmetric_and_matches_oracle(a, b):
    assert chamfer(a, b) == chamfer(b, a)
    assert chamfer(a, b) == pytest.approx(oracles.chamfer_cm(a, b), rel=1e-12, abs=1e-12)


def test_chamfer_zero_iff_same_set():
    a = np.random.default_rng(3).random((20, 3))
    assert chamfer(a, a[::-1]) == 0.0
    b = a.copy()
    b[0, 0] += 1e-6
    assert chamfer(a, b) > 0


def test_chamfer_empty_error():
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), np.zeros((3, 3)))


# ---------------------------------------------------------------- SSIM

def test_ssim_identity():
    img = np.random.default_rng(0).integers(0, 256, (40, 50, 3)).astype(np.uint8)
    assert ssim(img, img) == 1.0


def test_ssim_constant_images():
    a = np.full((20, 20, 3), 100, np.uint8)
    b = np.full((20, 20, 3), 110, np.uint8)
    assert ssim(a, b) == pytest.approx(expected.SSIM_CONST_100_110, abs=1e-12)
    assert ssim(a, b) == pytest.approx(expected.SSIM_CONST_100_110_DIGITS, abs=1e-12)


def test_ssim_negated_image_low():
    img = np.random.default_rng(1).integers(0, 256, (40, 40, 3)).astype(np.uint8)
    assert ssim(img, 255 - img) < 0.5


@given(st.integers(0, 2**31))
@settings(max_examples=20, deadline=None)
def test_ssim_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
    b = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12
    assert -1 <= ssim(a, b) <= 1


def test_ssim_validity_masks():
    rng = np.random.default_rng(2)
    a = rng.integers(0, 256, (30, 30, 3)).astype(np.uint8)
    b = a.copy()
    b[:, 15:] = 0
    va = np.ones((30, 30), bool)
    vb = np.zeros((30, 30), bool)
    vb[:, :10] = True  # windows around the shared centers stay left of the damage
    assert ssim(a, b, va, vb) == 1.0
    assert ssim(a, b) < 1.0
    assert ssim(a, b, va, np.zeros((30, 30), bool)) == 1.0


def test_ssim_errors():
    with pytest.raises(ValueError, match="mismatch"):
        ssim(np.zeros((20, 20, 3)), np.zeros((20, 21, 3)))
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


# ---------------------------------------------------------------- edge F1

def test_edge_f1_cases():
    e = np.zeros((20, 20), bool)
    e[5:15, 8] = True
    assert edge_f1(EdgeMap(e), EdgeMap(e), 0) == 1.0
    shifted = np.roll(e, 1, axis=1)
    assert edge_f1(shifted, e, 1) == 1.0
    assert edge_f1(shifted, e, 0) < 1.0
    assert edge_f1(np.zeros_like(e), e, 1) == 0.0
    assert edge_f1(e, np.zeros_like(e), 1) == 0.0
    assert edge_f1(np.zeros_like(e), np.zeros_like(e), 1) == 1.0


def test_edge_f1_errors():
    with pytest.raises(ValueError):
        edge_f1(np.zeros((3, 3), bool), np.zeros((3, 4), bool))
    with pytest.raises(ValueError):
        edge_f1(np.zeros((3, 3), bool), np.zeros((3, 3), bool), -1)


# ---------------------------------------------------------------- loss diagnostics

def test_l_geo_cases(sphere):
    assert l_geo(sphere, sphere) == 0.0
    assert l_geo(grid_scene([[[1.0]]]), grid_scene([[[0.0]]])) == pytest.approx(expected.L_GEO_1_VS_0, abs=1e-9)
    assert l_geo(grid_scene([[[-1.0]]]), grid_scene([[[1.0]]])) == pytest.approx(expected.L_GEO_MINUS1_VS_1,
                                                                                abs=1e-9)


def test_l_geo_uses_mutually_known():
    t = np.zeros((2, 1, 1))
    p = np.array([[[1.0]], [[3.0]]])
    known = np.array([[[True]], [[False]]])
    assert l_geo(grid_scene(p), grid_scene(t, known)) == pytest.approx(np.log(2), abs=1e-12)
    with pytest.raises(ValueError):
        l_geo(grid_scene(p, ~np.ones_like(known)), grid_scene(t))


def test_l_color_depth_cases():
    d = np.ones((4, 6))
    c = np.full((4, 6, 3), 100, np.uint8)
    assert l_color_depth(frame(c, d), frame(c, d)) == (0.0, 0.0)
    lc, _ = l_color_depth(frame(c, d), frame(c + 51, d))
    assert lc == pytest.approx(0.2, abs=1e-9)
    d2 = d.copy()
    d2[:2] += 0.05
    _, ld = l_color_depth(frame(c, d), frame(c, d2))
    assert ld == pytest.approx(0.025, abs=1e-9)


def test_l_color_depth_no_valid_pixels():
    d = np.ones((4, 6))
    c = np.zeros((4, 6, 3), np.uint8)
    assert l_color_depth(frame(c, d, np.zeros((4, 6), bool)), frame(c, d)) == (0.0, 0.0)
    with pytest.raises(ValueError):
        l_color_depth(frame(c, d), frame(np.zeros((4, 5, 3)), np.ones((4, 5))))


# ---------------------------------------------------------------- evaluate

@pytest.fixture(scope="module")
def sphere_eval():
    s = sphere_scene(10.0)
    c = sphere_center(s)
    cams = [look_at(c - [0, 1.0, 0], c), look_at(c + [0.8, 0.3, 0.4], c)]
    return s, cams


def test_evaluate_identity(sphere_eval):
    s, cams = sphere_eval
    r = evaluate(s, s, cams, EvalParams(chamfer_points=5000))
    assert r.iou == r.recall == r.ssim == r.edge_f1 == 1.0
    assert r.l_geo == r.l_color == r.l_depth == 0.0
    assert r.chamfer <= 1e-9
    assert len(r.per_view) == 2
    assert r.feature_l1 is None and r.fid is None
    assert r.provenance["chamfer_units"] == "cm" and r.provenance["tau"] == 1.0


def test_report_roundtrip(sphere_eval):
    s, cams = sphere_eval
    r = evaluate(s, s, cams, EvalParams(chamfer_points=2000))
    back = MetricsReport.from_json(r.to_json())
    assert back == r
    d = json.loads(r.to_json())
    for key in ("iou", "recall", "chamfer", "ssim", "edge_f1", "l_geo", "l_color", "l_depth", "per_view",
                "provenance"):
        assert key in d


def test_evaluate_errors(sphere_eval):
    s, cams = sphere_eval
    with pytest.raises(ValueError):
        evaluate(s, s, [])
    empty = new_scene(s.meta).replace(known=np.ones(s.dims, bool))
    with pytest.raises(ValueError, match="chamfer"):
        evaluate(empty, s, cams)


def test_evaluate_worker_cap(monkeypatch, sphere_eval):
    from ffkit.metrics import worker_count
    monkeypatch.setenv("FFKIT_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("FFKIT_THREADS", "0")
    assert worker_count() >= 1
