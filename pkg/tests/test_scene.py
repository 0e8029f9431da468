"""Scene bundle round trips, validation, and plot-extraction geometry."""

import math

import numpy as np
import pytest

from biofields.errors import ConfigError, DataError
from biofields.scene import (Camera, PlotSpec, SceneBundle, crop_plot_points,
                             extract_plot_views, load_scene_bundle,
                             look_at_camera, save_scene_bundle, split_similarity)
from biofields.synth import synth_scene


@pytest.fixture(scope="module")
def small_bundle():
    b = synth_scene(n_views=3, width=24, height=20, n_sparse=50, seed=1)
    b.plots.append({"id": "p0", "endpoints": [[0, 0, 0], [1, 0, 0]],
                    "biomass_grams": 120.0})
    return b


def test_bundle_round_trip(tmp_path, small_bundle):
    save_scene_bundle(small_bundle, tmp_path)
    back = load_scene_bundle(tmp_path)
    assert len(back.cameras) == 3
    for ca, cb in zip(small_bundle.cameras, back.cameras):
        assert ca.name == cb.name
        np.testing.assert_array_equal(ca.world_from_camera, cb.world_from_camera)
        assert (ca.fx, ca.fy, ca.cx, ca.cy) == (cb.fx, cb.fy, cb.cx, cb.cy)
    for ia, ib in zip(small_bundle.images, back.images):
        np.testing.assert_array_equal(ia, ib)
    for fa, fb in zip(small_bundle.feature_maps, back.feature_maps):
        np.testing.assert_array_equal(fa, fb)  # f32 bit-exact
    np.testing.assert_array_equal(small_bundle.sparse_points, back.sparse_points)
    for da, db in zip(small_bundle.gt_depths, back.gt_depths):
        np.testing.assert_array_equal(da, db)
    assert back.plots == small_bundle.plots


def test_feature_header_mismatch_detected(tmp_path, small_bundle):
    save_scene_bundle(small_bundle, tmp_path)
    f = tmp_path / "features" / f"{small_bundle.cameras[0].name}.bin"
    raw = f.read_bytes()
    f.write_bytes(raw[:-4])
    with pytest.raises(DataError, match=str(f.name)):
        load_scene_bundle(tmp_path)


def test_missing_image_detected(tmp_path, small_bundle):
    save_scene_bundle(small_bundle, tmp_path)
    (tmp_path / "images" / f"{small_bundle.cameras[1].name}.png").unlink()
    with pytest.raises(DataError, match="missing image"):
        load_scene_bundle(tmp_path)


def test_malformed_json_detected(tmp_path, small_bundle):
    save_scene_bundle(small_bundle, tmp_path)
    (tmp_path / "cameras.json").write_text("{not json")
    with pytest.raises(DataError, match="malformed JSON"):
        load_scene_bundle(tmp_path)


def test_non_orthonormal_rotation_rejected():
    M = np.eye(4)
    M[0, 0] = 1.01
    with pytest.raises(DataError, match="orthonormal"):
        Camera("bad", 8, 8, 10, 10, 4, 4, M)


def test_bundle_counts_validated():
    cam = look_at_camera("a", (0, -2, 0), width=8, height=8)
    img = np.zeros((8, 8, 3))
    with pytest.raises(DataError, match="feature maps"):
        SceneBundle([cam], [img], [], np.zeros((1, 3)), np.eye(4))


def test_normalized_applies_similarity():
    cam = look_at_camera("a", (0, -4, 0), width=8, height=8)
    img = np.zeros((8, 8, 3))
    fmap = np.zeros((8, 8, 2), dtype=np.float32)
    M = np.eye(4)
    M[:3, :3] *= 0.5          # scale world by half
    M[:3, 3] = [0.1, 0, 0]
    b = SceneBundle([cam], [img], [fmap], np.array([[2.0, 0, 0]]), M,
                    gt_depths=[np.full((8, 8), 4.0, np.float32)])
    nb = b.normalized()
    np.testing.assert_allclose(nb.sparse_points, [[1.1, 0, 0]])
    np.testing.assert_allclose(nb.cameras[0].position, [0.1, -2.0, 0])
    np.testing.assert_allclose(nb.gt_depths[0], 2.0)  # depths scale too
    s, R, t = split_similarity(M)
    assert abs(s - 0.5) < 1e-12


# -- plot geometry ---------------------------------------------------------------


def brute_force_select(cameras, e1, e2, along_thr, lateral_thr):
    """Deliberately independent: componentwise math, no shared helpers."""
    cx = [(a + b) / 2.0 for a, b in zip(e1, e2)]
    vv = [b - a for a, b in zip(e1, e2)]
    nv = math.sqrt(sum(c * c for c in vv))
    vv = [c / nv for c in vv]
    names = []
    for cam in cameras:
        p = [float(cam.position[i]) for i in range(3)]
        d = [p[i] - cx[i] for i in range(3)]
        dot = sum(d[i] * vv[i] for i in range(3))
        cr = [d[1] * vv[2] - d[2] * vv[1],
              d[2] * vv[0] - d[0] * vv[2],
              d[0] * vv[1] - d[1] * vv[0]]
        ncr = math.sqrt(sum(c * c for c in cr))
        if abs(dot) <= along_thr and ncr <= lateral_thr:
            names.append(cam.name)
    return names


def random_cameras(rng, n):
    cams = []
    for i in range(n):
        pos = rng.uniform(-12, 12, 3)
        target = pos + rng.standard_normal(3)
        cams.append(look_at_camera(f"c{i:03d}", pos, target, width=8, height=8))
    return cams


def test_overhead_camera_selection():
    plot = PlotSpec(np.array([[-1, 0, 0], [1, 0, 0]]))
    low = look_at_camera("low", (0, 0, 5.0), (0, 0, 0), width=8, height=8)
    high = look_at_camera("high", (0, 0, 9.0), (0, 0, 0), width=8, height=8)
    assert extract_plot_views([low], plot) == ["low"]      # 5 <= 7.5
    assert extract_plot_views([high], plot) == []          # 9 > 7.5


def test_far_along_axis_excluded():
    plot = PlotSpec(np.array([[-1, 0, 0], [1, 0, 0]]))
    cam = look_at_camera("far", (10.0, 0, 1.0), (0, 0, 0), width=8, height=8)
    assert extract_plot_views([cam], plot) == []


def test_selection_matches_brute_force():
    rng = np.random.default_rng(0)
    cams = random_cameras(rng, 500)
    e1, e2 = np.array([-3.0, 1.0, 0.2]), np.array([4.0, -2.0, 0.0])
    plot = PlotSpec(np.stack([e1, e2]))
    got = extract_plot_views(cams, plot)
    want = brute_force_select(cams, e1, e2, 1.5, 7.5)
    assert got == want
    assert 0 < len(got) < 500  # the case actually discriminates


def test_endpoint_swap_invariance():
    rng = np.random.default_rng(1)
    cams = random_cameras(rng, 200)
    e1, e2 = np.array([-3.0, 1.0, 0.2]), np.array([4.0, -2.0, 0.0])
    a = extract_plot_views(cams, PlotSpec(np.stack([e1, e2])))
    b = extract_plot_views(cams, PlotSpec(np.stack([e2, e1])))
    assert a == b


def test_crop_points_basics_and_brute_force():
    e1, e2 = np.array([-2.0, 0.0, 0.0]), np.array([2.0, 0.0, 0.0])
    plot = PlotSpec(np.stack([e1, e2]))
    center = plot.center
    assert len(crop_plot_points(center[None], plot, 1.0, 1.0)) == 1
    far = center + 2.0 * np.array([1.0, 0, 0])
    assert len(crop_plot_points(far[None], plot, 1.0, 1.0)) == 0

    rng = np.random.default_rng(2)
    pts = rng.uniform(-4, 4, (1000, 3))
    got = crop_plot_points(pts, plot, 1.3, 0.9)
    v = (e2 - e1) / np.linalg.norm(e2 - e1)
    keep = []
    for q in pts:
        d = q - center
        along = abs(float(d @ v))
        perp = math.sqrt(max(float(d @ d) - float(d @ v) ** 2, 0.0))
        if along <= 1.3 and perp <= 0.9:
            keep.append(q)
    np.testing.assert_array_equal(got, np.array(keep))


def test_coincident_endpoints_rejected():
    with pytest.raises(ConfigError, match="coincide"):
        PlotSpec(np.zeros((2, 3)))
