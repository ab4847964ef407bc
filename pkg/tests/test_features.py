import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aesthetic3d import features as F
from aesthetic3d import geometry as geo
from aesthetic3d import primitives as prim
from conftest import rotation


def sphere_profile(n=24, r=0.5):
    t = np.linspace(0, np.pi, n + 1)
    return [(r * np.sin(a), -r * np.cos(a)) for a in t]


# --- curvature ---------------------------------------------------------------

def test_plane_curvature_zero():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.random((3000, 2)), np.zeros(3000)])
    mean, var, med = F.curvature_features(pts, 20)
    assert mean < 1e-3 and med < 1e-3


def fibonacci_sphere(n, r):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return r * np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def test_sphere_curvature_radius_free():
    values = [F.curvature_features(geo.sample_point_cloud(prim.icosphere(4, r), 5000, seed=1), 20)
              for r in (0.2, 1.0, 7.0)]
    np.testing.assert_allclose(values[0], values[1], rtol=1e-9)
    np.testing.assert_allclose(values[2], values[1], rtol=1e-9)
    assert values[1][1] < 1e-6


def test_sphere_curvature_uniform():
    # every point of a dense quasi-uniform sample should see the same curvature
    for radius in (0.2, 1.0, 7.0):
        sv = F.surface_variation(fibonacci_sphere(5000, radius), 20)
        med = np.median(sv)
        assert sv.var() < 1e-6
        assert np.all(np.abs(sv - med) <= 0.1 * med)


def test_bump_is_right_skewed():
    rng = np.random.default_rng(0)
    g = rng.uniform(-1, 1, (6000, 2))
    r2 = (g ** 2).sum(axis=1)
    z = np.where(r2 < 0.25, np.sqrt(np.clip(0.25 - r2, 0, None)), 0.0)
    mean, _, med = F.curvature_features(np.column_stack([g, z]), 20)
    assert med < mean


def test_k_larger_than_cloud():
    with pytest.raises(ValueError):
        F.curvature_features(np.random.default_rng(0).random((10, 3)), 20)


def test_surface_variation_bounds():
    sv = F.surface_variation(np.random.default_rng(1).random((500, 3)), 20)
    assert sv.min() >= 0 and sv.max() <= 1 / 3 + 1e-12


# --- compactness ------------------------------------------------------------------

def test_sv_cube(unit_cube):
    assert F.surface_to_volume(unit_cube) == pytest.approx(6.0, abs=1e-9)


def test_sv_sphere():
    for r in (0.5, 2.0):
        assert F.surface_to_volume(prim.icosphere(4, r)) == pytest.approx(3 / r, rel=0.01)


def test_sv_scaling():
    assert F.surface_to_volume(prim.box((2.0, 2.0, 2.0))) == pytest.approx(3.0, abs=1e-9)


def test_convexity_convex(unit_cube, sphere):
    assert F.convexity_ratio(unit_cube) == pytest.approx(1.0, abs=1e-6)
    assert F.convexity_ratio(sphere) == pytest.approx(1.0, abs=1e-6)
    assert F.hollow_ratio(unit_cube) == pytest.approx(0.0, abs=1e-6)


def test_convexity_open_cavity():
    assert F.convexity_ratio(prim.cavity_box((1, 1, 1), (0.5, 0.5, 0.5))) == pytest.approx(0.875, rel=0.02)


def test_convexity_edge_touching_cubes():
    # two unit cubes sharing one edge: hull is a hexagonal prism of volume 3
    m = geo.merge_meshes([prim.box(center=(0.5, 0.5, 0.5)), prim.box(center=(1.5, 1.5, 0.5))])
    assert F.convexity_ratio(m) == pytest.approx(2 / 3, abs=1e-9)


def test_hollow_identity_cavity():
    m = prim.cavity_box((1, 1, 1), (0.6, 0.4, 0.7))
    assert F.hollow_ratio(m) == 1.0 - F.convexity_ratio(m)


def test_torus_hollow_analytic():
    R, r = 1.0, 0.3
    m = prim.torus(R, r, 192, 96)
    v_torus = 2 * math.pi ** 2 * R * r ** 2
    # hull: cylinder of radius R and height 2r plus the outer half-disc revolved
    v_hull = math.pi * R ** 2 * 2 * r + (math.pi * r ** 2 / 2) * 2 * math.pi * (R + 4 * r / (3 * math.pi))
    assert F.hollow_ratio(m) == pytest.approx(1 - v_torus / v_hull, rel=0.02)


# --- aspect ratios ------------------------------------------------------------------

def test_aspect_cube(unit_cube):
    np.testing.assert_allclose(F.aspect_ratios(geo.oriented_bounding_box(unit_cube)), 1.0, atol=1e-9)


def test_aspect_124():
    ar = F.aspect_ratios(geo.oriented_bounding_box(prim.box((1.0, 2.0, 4.0))))
    np.testing.assert_allclose(ar, (0.5, 0.5, 4.0), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(ext=st.tuples(*[st.floats(1e-3, 1e3)] * 3))
def test_aspect_product_telescopes(ext):
    obb = geo.Obb(np.zeros(3), np.eye(3), np.array(ext))
    assert math.prod(F.aspect_ratios(obb)) == pytest.approx(1.0, abs=1e-9)


def test_aspect_zero_extent():
    with pytest.raises(geo.GeometryError):
        F.aspect_ratios(geo.Obb(np.zeros(3), np.eye(3), np.array([1.0, 0.0, 1.0])))


# --- silhouettes ----------------------------------------------------------------------

def test_cube_sections_are_squares(unit_cube):
    assert F.silhouette_complexity(unit_cube, 8, axis=[0, 0, 1]) == 8 * 4


def test_cylinder_sections():
    m = prim.cylinder(0.5, 2.0, 64)
    assert F.silhouette_complexity(m, 8) == 8 * 64


def test_star_beats_sphere():
    sphere = prim.lathe(sphere_profile(), segments=32)
    star = prim.star_prism(points=32, outer=0.5, inner=0.35, height=1.0)
    assert F.silhouette_complexity(star) > F.silhouette_complexity(sphere)


def test_plane_missing_mesh(unit_cube):
    assert F.cross_section(unit_cube, [0, 0, 1], 5.0) == []


def test_multiview_symmetric_views_equal():
    # squat solid of revolution about Z: the slicing axis lies in the XY plane,
    # so each view cuts the 96-gon at a different angle
    m = prim.lathe([(0.0, -0.2), (0.6, -0.15), (0.8, 0.0), (0.5, 0.2), (0.0, 0.25)], segments=96)
    prof = F.multiview_silhouette_profile(m, 8)
    assert np.all(np.abs(prof - prof.mean()) <= 0.01 * prof.mean())


def test_multiview_one_view_reduces(unit_cube):
    m = prim.box((1.0, 2.0, 3.0))
    assert F.multiview_silhouette_complexity(m, 1) == F.silhouette_complexity(m)


def test_multiview_doubling():
    m = prim.cylinder(0.5, 2.0, 64)
    a = F.multiview_silhouette_complexity(m, 4)
    b = F.multiview_silhouette_complexity(m, 8)
    assert 1.8 * a <= b <= 2.2 * a


# --- skeleton ----------------------------------------------------------------------------

def test_rod_skeleton_is_axis():
    L = 40
    vol = np.zeros((9, 9, 50), dtype=bool)
    vol[3:6, 3:6, 5:5 + L] = True
    n = F.skeleton_complexity(vol)
    assert 0.8 * L <= n <= 1.2 * L


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_rod_skeleton_volumetric(axis):
    L = 40
    vol = np.zeros((9, 9, 50), dtype=bool)
    vol[3:6, 3:6, 5:5 + L] = True
    vol = np.moveaxis(vol, 2, axis)
    n = F.skeleton_complexity(vol, method="volumetric")
    assert 0.8 * L <= n <= 1.2 * L


def test_rod_across_slices_keeps_each_slice():
    # slice-wise thinning keeps one centre line per Z slice of an in-plane rod
    vol = np.zeros((50, 9, 9), dtype=bool)
    vol[5:45, 3:6, 3:6] = True
    assert F.skeleton_complexity(vol) == pytest.approx(3 * 40, rel=0.2)


def test_cube_collapses():
    grid = geo.voxelize(prim.box(), 64)
    occupied = np.count_nonzero(grid.occupancy)
    assert F.skeleton_complexity(grid) * 10 < occupied


def prong_volume():
    vol = np.zeros((64, 64, 8), dtype=bool)
    lengths = (30, 20, 25)
    # prongs along +x, +y and -x from a shared hub, 3x3 cross-section
    vol[32:32 + lengths[0], 31:34, 2:5] = True
    vol[31:34, 32:32 + lengths[1], 2:5] = True
    vol[32 - lengths[2]:32, 31:34, 2:5] = True
    return vol, lengths


def test_three_prongs_volumetric():
    vol, lengths = prong_volume()
    assert F.skeleton_complexity(vol, method="volumetric") == pytest.approx(sum(lengths), rel=0.2)


def test_three_prongs_slices():
    vol, lengths = prong_volume()
    assert F.skeleton_complexity(vol) == pytest.approx(sum(lengths), rel=0.2)


def test_zhang_suen_fixpoint():
    vol = np.zeros((20, 20, 1), dtype=bool)
    vol[4:16, 4:16, 0] = True
    once = F.zhang_suen_slices(vol)
    assert np.array_equal(F.zhang_suen_slices(once), once)


def test_volumetric_mode():
    vol = np.zeros((30, 9, 9), dtype=bool)
    vol[5:25, 3:6, 3:6] = True
    assert 0 < F.skeleton_complexity(vol, method="volumetric") <= 25


def test_empty_grid():
    with pytest.raises(geo.GeometryError):
        F.skeleton_complexity(np.zeros((4, 4, 4), dtype=bool))


# --- aggregate ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cube_vector(unit_cube):
    return F.extract_all(unit_cube)


def test_extract_cube(cube_vector):
    v = cube_vector
    assert v.surface_to_volume_ratio == pytest.approx(6.0, abs=1e-6)
    assert v.convexity_ratio == pytest.approx(1.0, abs=1e-6)
    assert v.hollow_ratio == pytest.approx(0.0, abs=1e-6)
    for ar in (v.aspect_ratio_x, v.aspect_ratio_y, v.aspect_ratio_z):
        assert ar == pytest.approx(1.0, abs=1e-6)
    assert np.all(np.isfinite(v.as_array()))
    assert len(F.FEATURE_FIELDS) == len(F.FEATURE_NAMES) == 12


def test_extract_deterministic(unit_cube, cube_vector):
    assert F.extract_all(unit_cube) == cube_vector


def test_extract_icosphere():
    v = F.extract_all(prim.icosphere(4))
    assert v.convexity_ratio == pytest.approx(1.0, abs=1e-6)
    assert v.curvature_variance < 1e-3


def test_feature_vector_round_trip(cube_vector):
    assert F.FeatureVector.from_array(cube_vector.as_array()) == cube_vector


def test_failure_names_feature():
    flat = geo.Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], [[0, 1, 2], [1, 3, 2]])
    with pytest.raises(F.FeatureError) as err:
        F.extract_all(flat, F.FeatureConfig(n_points=200))
    assert err.value.feature


def shape_under_test():
    return prim.lathe([(0.0, 0.0), (0.35, 0.1), (0.2, 0.6), (0.4, 1.1), (0.0, 1.3)], segments=48)


SCALE_INVARIANT = ("convexity_ratio", "hollow_ratio", "aspect_ratio_x", "aspect_ratio_y",
                   "aspect_ratio_z", "mean_curvature", "median_curvature")


@pytest.fixture(scope="module")
def base_vector():
    return F.extract_all(shape_under_test())


@pytest.mark.parametrize("s", [0.25, 3.0])
def test_scale_invariance(base_vector, s):
    m = shape_under_test()
    v = F.extract_all(geo.Mesh(m.vertices * s, m.faces))
    for f in SCALE_INVARIANT:
        assert getattr(v, f) == pytest.approx(getattr(base_vector, f), abs=1e-6), f
    assert v.surface_to_volume_ratio == pytest.approx(base_vector.surface_to_volume_ratio / s, rel=1e-9)


@pytest.mark.parametrize("axis,angle", [([0, 0, 1], 0.7), ([1, 1, 0], 0.4)])
def test_rotation_invariance(base_vector, axis, angle):
    v = F.extract_all(geo.rotate(shape_under_test(), rotation(axis, angle)))
    for f in F.FEATURE_FIELDS:
        if "silhouette" in f or f == "skeleton_complexity":
            continue
        assert getattr(v, f) == pytest.approx(getattr(base_vector, f), rel=0.01, abs=1e-6), f


def test_multiview_z_rotation(base_vector):
    v = F.extract_all(geo.rotate(shape_under_test(), geo.rotation_z(0.3)))
    assert v.multiview_silhouette_complexity == pytest.approx(base_vector.multiview_silhouette_complexity, rel=0.05)


def test_hollow_plus_convexity(base_vector):
    assert base_vector.hollow_ratio + base_vector.convexity_ratio == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("make", [prim.cavity_box, prim.box, lambda: prim.star_prism(6)])
def test_rotation_invariance_degenerate_inertia(make):
    # equal principal moments leave the eigenvectors free; the voxel frame must not follow the pose
    base = F.extract_all(make())
    v = F.extract_all(geo.rotate(make(), rotation([1, 2, 3], 1.1)))
    for f in F.FEATURE_FIELDS:
        if "silhouette" in f or f.startswith("aspect"):
            continue
        assert getattr(v, f) == pytest.approx(getattr(base, f), rel=0.01, abs=1e-6), f
