import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from aesthetic3d import geometry as geo
from aesthetic3d import primitives as prim
from conftest import rotation


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- loading ---------------------------------------------------------------

def test_single_triangle_obj(tmp_path):
    m = geo.load_mesh(write(tmp_path, "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert m.vertices.shape == (3, 3)
    assert m.faces.shape == (1, 3)


def test_cube_off(tmp_path, unit_cube):
    lines = ["OFF", "8 12 0"]
    lines += [" ".join(str(float(x)) for x in v) for v in unit_cube.vertices]
    lines += ["3 " + " ".join(map(str, f)) for f in unit_cube.faces]
    m = geo.load_mesh(write(tmp_path, "c.off", "\n".join(lines) + "\n"))
    assert len(m.faces) == 12
    assert geo.mesh_volume(m) == pytest.approx(1.0, abs=1e-12)


def test_bad_index_names_line(tmp_path):
    text = "".join(f"v {x} {y} {z}\n" for x in (0, 1) for y in (0, 1) for z in (0, 1))
    text += "f 1 2 3\nf 1 2 99\n"
    with pytest.raises(geo.MeshFormatError, match=r"c\.obj:10"):
        geo.load_mesh(write(tmp_path, "c.obj", text))


def test_unsupported_and_empty(tmp_path):
    with pytest.raises(geo.MeshFormatError, match="extension"):
        geo.load_mesh(write(tmp_path, "a.stl", "solid"))
    with pytest.raises(geo.MeshFormatError, match="empty"):
        geo.load_mesh(write(tmp_path, "e.obj", "# nothing\n"))


def test_degenerate_faces_dropped(tmp_path):
    m = geo.load_mesh(write(tmp_path, "d.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n"))
    assert len(m.faces) == 1 and m.dropped_faces == 1


def test_quads_and_slash_indices(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n"
    m = geo.load_mesh(write(tmp_path, "q.obj", text))
    assert len(m.faces) == 2
    assert geo.mesh_surface_area(m) == pytest.approx(1.0)


def test_obj_round_trip(tmp_path, sphere):
    p = tmp_path / "s.obj"
    geo.save_obj(sphere, p, header="hello")
    assert p.read_text().startswith("# hello\n")
    back = geo.load_mesh(p)
    np.testing.assert_allclose(back.vertices, sphere.vertices, rtol=0, atol=0)
    np.testing.assert_array_equal(back.faces, sphere.faces)


# --- integral quantities -----------------------------------------------------

def test_cube_volume_and_area(unit_cube):
    assert geo.mesh_volume(unit_cube) == pytest.approx(1.0, abs=1e-12)
    assert geo.mesh_surface_area(unit_cube) == pytest.approx(6.0, abs=1e-12)


def test_icosphere_volume_area(sphere):
    assert geo.mesh_volume(sphere) == pytest.approx(4 * math.pi / 3, rel=0.01)
    assert geo.mesh_surface_area(sphere) == pytest.approx(4 * math.pi, rel=0.01)


def test_flipped_winding_repaired(unit_cube):
    faces = unit_cube.faces.copy()
    faces[::3] = faces[::3, ::-1]
    m = geo.Mesh(unit_cube.vertices, faces)
    assert geo.mesh_volume(m) == pytest.approx(1.0, abs=1e-12)


def test_open_mesh_falls_back_to_voxels(unit_cube):
    open_box = geo.Mesh(unit_cube.vertices, unit_cube.faces[2:])
    assert not geo.is_watertight(open_box)
    est = geo.volume_estimate(open_box)
    assert est.provenance == "voxel"
    assert geo.volume_estimate(unit_cube).provenance == "divergence"


def test_vertex_normals_unit(sphere):
    n = geo.vertex_normals(sphere)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-6)
    # outward on a sphere centred at the origin
    assert np.all(np.einsum("ij,ij->i", n, sphere.vertices) > 0)


# --- normalization -------------------------------------------------------------

def test_normalize_translation():
    m = geo.normalize(prim.box(center=(5, 5, 5)))
    np.testing.assert_allclose(geo.area_centroid(m), 0.0, atol=1e-9)


def test_normalize_scale(unit_cube):
    m = geo.normalize(unit_cube, 2.0)
    assert geo.oriented_bounding_box(m).diagonal == pytest.approx(2.0, abs=1e-9)


def test_normalize_degenerate():
    flat = geo.Mesh([[0, 0, 0], [0, 0, 0], [0, 0, 0]], [[0, 1, 2]])
    with pytest.raises(geo.GeometryError):
        geo.normalize(flat)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.05, 20), shift=st.tuples(*[st.floats(-10, 10)] * 3),
       angle=st.floats(0, 2 * math.pi))
def test_normalize_idempotent_and_invariant(scale, shift, angle):
    base = prim.box((1.0, 2.0, 3.0))
    once = geo.normalize(base)
    moved = geo.Mesh(base.vertices * scale + np.array(shift), base.faces)
    np.testing.assert_allclose(geo.normalize(moved).vertices, once.vertices, atol=1e-9)
    np.testing.assert_allclose(geo.normalize(once).vertices, once.vertices, atol=1e-9)


# --- sampling --------------------------------------------------------------------

def test_sampling_deterministic(sphere):
    a = geo.sample_point_cloud(sphere, 500, seed=3)
    b = geo.sample_point_cloud(sphere, 500, seed=3)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.face_index, b.face_index)


def test_points_on_source_faces(sphere):
    cloud = geo.sample_point_cloud(sphere, 2000, seed=1)
    tri = sphere.triangles[cloud.face_index]
    # solve for barycentric coordinates in the triangle's plane
    e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    d = cloud.points - tri[:, 0]
    G = np.stack([np.einsum("ij,ij->i", e1, e1), np.einsum("ij,ij->i", e1, e2),
                  np.einsum("ij,ij->i", e2, e2)], 1)
    r = np.stack([np.einsum("ij,ij->i", d, e1), np.einsum("ij,ij->i", d, e2)], 1)
    det = G[:, 0] * G[:, 2] - G[:, 1] ** 2
    u = (G[:, 2] * r[:, 0] - G[:, 1] * r[:, 1]) / det
    v = (G[:, 0] * r[:, 1] - G[:, 1] * r[:, 0]) / det
    resid = d - u[:, None] * e1 - v[:, None] * e2
    assert np.abs(resid).max() < 1e-9
    assert u.min() > -1e-9 and v.min() > -1e-9 and (u + v).max() < 1 + 1e-9


def test_area_weighted_chi_square():
    m = prim.box((1.0, 2.0, 3.0))
    n = 60000
    expected = n * geo.face_areas(m) / geo.face_areas(m).sum()
    pvalues = []
    for seed in range(20):
        counts = np.bincount(geo.sample_point_cloud(m, n, seed=seed).face_index, minlength=len(m.faces))
        pvalues.append(stats.chisquare(counts, expected).pvalue)
    # rejections at alpha=0.01 should be rare: P(>= 3 of 20) is about 0.001
    assert sum(p < 0.01 for p in pvalues) <= 2
    assert stats.kstest(pvalues, "uniform").pvalue > 0.01


def test_single_sample(unit_cube):
    cloud = geo.sample_point_cloud(unit_cube, 1, seed=0)
    assert len(cloud) == 1
    p = cloud.points[0]
    assert np.isclose(np.abs(p).max(), 0.5)


def test_vertex_mode(unit_cube):
    cloud = geo.sample_point_cloud(unit_cube, 8, seed=0, mode="vertices")
    assert len(cloud) == 8


# --- convex hull ------------------------------------------------------------------

def test_hull_cube_corners(unit_cube):
    assert geo.mesh_volume(geo.convex_hull(unit_cube.vertices)) == pytest.approx(1.0, abs=1e-12)


def test_hull_ignores_interior(unit_cube):
    pts = np.vstack([unit_cube.vertices, np.random.default_rng(0).uniform(-0.4, 0.4, (50, 3))])
    hull = geo.convex_hull(pts)
    assert geo.mesh_volume(hull) == pytest.approx(1.0, abs=1e-12)
    assert len(hull.vertices) == 8


def test_hull_ball_bound():
    rng = np.random.default_rng(0)
    vols = []
    for n in (100, 1000, 10000):
        d = rng.standard_normal((n, 3))
        pts = d / np.linalg.norm(d, axis=1, keepdims=True) * rng.random(n)[:, None] ** (1 / 3)
        vols.append(geo.mesh_volume(geo.convex_hull(pts)))
    assert all(v < 4 * math.pi / 3 for v in vols)
    assert vols[0] < vols[1] < vols[2]


def test_hull_idempotent(sphere):
    h = geo.convex_hull(geo.sample_point_cloud(sphere, 300, seed=2).points)
    hh = geo.convex_hull(h.vertices)
    a = np.array(sorted(map(tuple, h.vertices)))
    b = np.array(sorted(map(tuple, hh.vertices)))
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_hull_rejects_coplanar():
    pts = np.random.default_rng(0).random((20, 3))
    pts[:, 2] = 0
    with pytest.raises(geo.GeometryError):
        geo.convex_hull(pts)


def test_hull_volume_dominates():
    m = prim.cavity_box()
    assert geo.mesh_volume(geo.convex_hull(m.vertices)) >= geo.mesh_volume(m)


# --- oriented bounding box --------------------------------------------------------------

def test_obb_box_extents():
    obb = geo.oriented_bounding_box(prim.box((1.0, 2.0, 3.0)))
    np.testing.assert_allclose(obb.extents, [1.0, 2.0, 3.0], atol=1e-9)
    np.testing.assert_allclose(obb.axes @ obb.axes.T, np.eye(3), atol=1e-9)


def test_obb_rotated_extent_multiset():
    m = prim.box((1.0, 2.0, 3.0))
    rot = geo.rotate(m, rotation([0, 0, 1], math.radians(30)))
    e = np.sort(geo.oriented_bounding_box(rot).extents)
    np.testing.assert_allclose(e, [1.0, 2.0, 3.0], atol=1e-6)


def test_obb_cube(unit_cube):
    np.testing.assert_allclose(geo.oriented_bounding_box(unit_cube).extents, 1.0, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(angles=st.tuples(*[st.floats(0, 2 * math.pi)] * 3))
def test_obb_contains_vertices(angles):
    m = prim.lathe([(0.0, 0.0), (0.3, 0.2), (0.5, 0.9), (0.0, 1.4)], segments=17)
    R = rotation([1, 0, 0], angles[0]) @ rotation([0, 1, 0], angles[1]) @ rotation([0, 0, 1], angles[2])
    m = geo.rotate(m, R)
    obb = geo.oriented_bounding_box(m)
    local = (m.vertices - obb.center) @ obb.axes.T
    assert np.all(np.abs(local) <= obb.extents / 2 + 1e-6 * obb.diagonal)
    np.testing.assert_allclose(obb.axes @ obb.axes.T, np.eye(3), atol=1e-9)


# --- voxels -----------------------------------------------------------------------

def test_cube_voxels_fill_block(unit_cube):
    grid = geo.voxelize(unit_cube, 64)
    assert grid.resolution == (64, 64, 64)
    n = np.count_nonzero(grid.occupancy)
    # the cube spans at most 64 cells per axis; allow two boundary layers
    side = 1.0 / grid.cell_size
    assert (side - 2) ** 3 <= n <= (side + 2) ** 3


def test_thin_plate_slabs():
    grid = geo.voxelize(prim.box((1.0, 1.0, 0.005)), 64)
    occupied_z = np.flatnonzero(grid.occupancy.any(axis=(0, 1)))
    assert 1 <= len(occupied_z) <= 3


@pytest.mark.parametrize("mesh", [prim.box((1.0, 2.0, 3.0)), prim.icosphere(3), prim.cylinder(0.5, 2.0)],
                         ids=["box", "sphere", "cylinder"])
def test_voxel_volume_close(mesh):
    assert geo.voxelize(mesh, 64).volume() == pytest.approx(geo.mesh_volume(mesh), rel=0.05)


def test_voxel_mesh_is_closed(unit_cube):
    vm = geo.voxel_mesh(geo.voxelize(unit_cube, 8))
    assert geo.is_watertight(vm)


def test_resolution_floor(unit_cube):
    with pytest.raises(ValueError):
        geo.voxelize(unit_cube, 4)


def test_obb_tight_for_rotated_cube(unit_cube):
    # isotropic inertia: the box comes from the hull, not from arbitrary eigenvectors
    obb = geo.oriented_bounding_box(geo.rotate(unit_cube, rotation([1, 2, 3], 1.1)))
    np.testing.assert_allclose(np.sort(obb.extents), [1, 1, 1], atol=1e-9)
