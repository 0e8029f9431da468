"""Synthetic-scene oracle tests: closed-form geometry, determinism."""

import numpy as np

from biofields.scene import look_at_camera
from biofields.synth import (GroundPlane, Sphere, default_primitives,
                             render_camera, scene_sdf, surface_points,
                             synth_cloud, synth_scene)


def test_sphere_silhouette_matches_disk_area():
    r, d = 0.35, 2.2
    sphere = Sphere(np.zeros(3), r, np.array([0.8, 0.2, 0.2]), np.array([1.0]))
    cam = look_at_camera("c", (0, -d, 0), (0, 0, 0), width=96, height=96, focal=200.0)
    _, _, _, hit = render_camera([sphere], cam)
    projected_radius = cam.fx * r / np.sqrt(d * d - r * r)
    expected = np.pi * projected_radius ** 2
    assert abs(hit.sum() - expected) / expected < 0.02


def test_plane_depth_at_center():
    plane = GroundPlane(-0.3, np.array([0.5, 0.5, 0.5]), np.array([1.0]))
    h = 1.4
    # odd size puts the principal point exactly on the pixel grid
    cam = look_at_camera("c", (0, 0, h), (0, 0, -0.3), width=33, height=33)
    _, _, depth, hit = render_camera([plane], cam)
    cy, cx = int(cam.cy), int(cam.cx)
    assert hit[cy, cx]
    assert abs(depth[cy, cx] - (h + 0.3)) < 1e-4


def test_sparse_points_on_surface():
    prims = default_primitives()
    rng = np.random.default_rng(0)
    pts = surface_points(prims, rng, 500)
    s, _ = scene_sdf(prims, pts)
    assert np.abs(s).max() < 1e-6
    assert np.abs(pts).max() <= 1.0


def test_synth_scene_deterministic():
    a = synth_scene(n_views=2, width=16, height=16, n_sparse=40, seed=7)
    b = synth_scene(n_views=2, width=16, height=16, n_sparse=40, seed=7)
    for ia, ib in zip(a.images, b.images):
        np.testing.assert_array_equal(ia, ib)
    np.testing.assert_array_equal(a.sparse_points, b.sparse_points)
    c = synth_scene(n_views=2, width=16, height=16, n_sparse=40, seed=8)
    assert not np.array_equal(a.sparse_points, c.sparse_points)


def test_images_are_quantized_and_in_range():
    b = synth_scene(n_views=1, width=16, height=16, n_sparse=10, seed=0)
    img = b.images[0]
    assert img.min() >= 0 and img.max() <= 1
    np.testing.assert_array_equal(img, np.round(img * 255) / 255)


def test_feature_maps_label_primitives():
    b = synth_scene(n_views=1, width=32, height=32, n_sparse=10, seed=0)
    fmap = b.feature_maps[0]
    labels = {tuple(v) for v in fmap.reshape(-1, fmap.shape[-1])}
    assert len(labels) == 3  # background zero + sphere + plane


def test_synth_cloud_shapes():
    pts, feats = synth_cloud(0, 400, feature_dim=6)
    assert pts.shape == (400, 3) and feats.shape == (400, 6)
    assert np.abs(pts).max() < 1.0
    pts2, _ = synth_cloud(0, 400, feature_dim=6)
    np.testing.assert_array_equal(pts, pts2)
