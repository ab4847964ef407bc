"""Interpretable geometric descriptors of a single shape."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .geometry import Mesh, Obb, PointCloud, VoxelGrid

__all__ = [
    "FEATURE_FIELDS", "FEATURE_NAMES", "FeatureVector", "FeatureConfig", "FeatureError",
    "surface_variation", "curvature_features", "surface_to_volume", "convexity_ratio",
    "hollow_ratio", "aspect_ratios", "cross_section", "silhouette_complexity",
    "multiview_silhouette_complexity", "zhang_suen_slices", "skeleton_complexity",
    "extract_all",
]

# attribute name -> short column header used in every table
_COLUMNS = {
    "mean_curvature": "Mean Curv",
    "curvature_variance": "Curv Var",
    "median_curvature": "Med Curv",
    "surface_to_volume_ratio": "S/V Ratio",
    "convexity_ratio": "Convexity",
    "aspect_ratio_x": "AR X",
    "aspect_ratio_y": "AR Y",
    "aspect_ratio_z": "AR Z",
    "silhouette_complexity": "Silh Comp",
    "multiview_silhouette_complexity": "MV Silh Comp",
    "hollow_ratio": "Hollow Ratio",
    "skeleton_complexity": "Skel Comp",
}
FEATURE_FIELDS = tuple(_COLUMNS)
FEATURE_NAMES = tuple(_COLUMNS.values())


class FeatureError(RuntimeError):
    def __init__(self, feature, cause):
        self.feature = feature
        super().__init__(f"{feature}: {cause}")


@dataclass(frozen=True)
class FeatureVector:
    mean_curvature: float
    curvature_variance: float
    median_curvature: float
    surface_to_volume_ratio: float
    convexity_ratio: float
    aspect_ratio_x: float
    aspect_ratio_y: float
    aspect_ratio_z: float
    silhouette_complexity: float
    multiview_silhouette_complexity: float
    hollow_ratio: float
    skeleton_complexity: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FEATURE_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        return cls(*map(float, values))


@dataclass(frozen=True)
class FeatureConfig:
    k: int = 20
    n_points: int = 5000
    sample_mode: str = "surface"
    resolution: int = 64
    n_planes: int = 8
    n_views: int = 8
    skeleton_method: str = "zhang-suen"
    seed: int = 0

    def replace(self, **changes) -> "FeatureConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# curvature

def surface_variation(points: np.ndarray, k: int = 20) -> np.ndarray:
    """Per-point ``l0 / (l0 + l1 + l2)`` of the k-nearest-neighbour covariance
    (``l0`` smallest eigenvalue; the neighbourhood includes the point)."""
    points = np.asarray(points, dtype=float)
    if k > len(points):
        raise ValueError(f"k={k} exceeds the number of points ({len(points)})")
    if k < 3:
        raise ValueError("k must be >= 3")
    _, idx = cKDTree(points).query(points, k=k)
    nbrs = points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals = np.linalg.eigvalsh(cov)
    total = evals.sum(axis=1)
    out = np.zeros(len(points))
    ok = total > 0
    out[ok] = np.clip(evals[ok, 0], 0, None) / total[ok]
    return out


def curvature_features(cloud, k: int = 20) -> tuple[float, float, float]:
    """(mean, variance, median) of the surface-variation curvature proxy."""
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    sv = surface_variation(pts, k)
    return float(sv.mean()), float(sv.var()), float(np.median(sv))


# ---------------------------------------------------------------------------
# compactness

def surface_to_volume(mesh: Mesh) -> float:
    volume = geo.mesh_volume(mesh)
    if not volume > 0:
        raise geo.GeometryError("zero volume")
    return geo.mesh_surface_area(mesh) / volume


def _volumes(mesh: Mesh):
    hull = geo.convex_hull(mesh.vertices)
    hull_volume = geo.mesh_volume(hull)
    if not hull_volume > 0:
        raise geo.GeometryError("zero convex hull volume")
    return geo.mesh_volume(mesh), hull_volume


def convexity_ratio(mesh: Mesh) -> float:
    """Volume over convex hull volume, capped at 1 (voxel fallbacks can
    overshoot slightly)."""
    volume, hull_volume = _volumes(mesh)
    return min(volume / hull_volume, 1.0)


def hollow_ratio(mesh: Mesh) -> float:
    return 1.0 - convexity_ratio(mesh)


def aspect_ratios(obb: Obb) -> tuple[float, float, float]:
    ex, ey, ez = (float(e) for e in obb.extents)
    if min(ex, ey, ez) <= 0:
        raise geo.GeometryError("aspect ratios need positive extents")
    return ex / ey, ey / ez, ez / ex


# ---------------------------------------------------------------------------
# silhouettes

def cross_section(mesh: Mesh, normal, offset: float) -> list[tuple[np.ndarray, bool]]:
    """Intersect the mesh with the plane ``x . normal = offset``.

    Returns polylines as ``(points, closed)``. Vertices exactly on the plane
    count as lying above it, so every crossing triangle contributes exactly
    one segment and segments chain through shared mesh edges.
    """
    normal = np.asarray(normal, dtype=float)
    v = mesh.vertices
    d = v @ normal - offset
    above = d >= 0
    f = mesh.faces
    fa = above[f]
    crossing = fa.any(axis=1) & ~fa.all(axis=1)
    if not crossing.any():
        return []
    f = f[crossing]
    fa = fa[crossing]
    ea = np.stack([f[:, 0], f[:, 1], f[:, 2]], axis=1)
    eb = np.stack([f[:, 1], f[:, 2], f[:, 0]], axis=1)
    cut = fa != np.stack([fa[:, 1], fa[:, 2], fa[:, 0]], axis=1)
    lo, hi = np.minimum(ea, eb)[cut], np.maximum(ea, eb)[cut]
    # canonical (lo, hi) orientation so both faces compute identical points
    t = d[lo] / (d[lo] - d[hi])
    pts = v[lo] + t[:, None] * (v[hi] - v[lo])
    keys = lo * len(v) + hi
    keys = keys.reshape(-1, 2)
    pts = pts.reshape(-1, 2, 3)

    point_of = {}
    adjacency = {}
    for s, (k0, k1) in enumerate(keys.tolist()):
        point_of[k0] = pts[s, 0]
        point_of[k1] = pts[s, 1]
        adjacency.setdefault(k0, []).append((s, k1))
        adjacency.setdefault(k1, []).append((s, k0))

    used = np.zeros(len(keys), dtype=bool)

    def walk(key, first_seg):
        chain = [key]
        seg = first_seg
        while True:
            used[seg] = True
            k0, k1 = keys[seg]
            nxt = k1 if k0 == key else k0
            chain.append(nxt)
            key = nxt
            step = [(s, o) for s, o in adjacency[key] if not used[s]]
            if not step:
                return chain
            seg = step[0][0]

    lines = []
    for s in range(len(keys)):
        if used[s]:
            continue
        k0 = int(keys[s, 0])
        chain = walk(k0, s)
        closed = chain[0] == chain[-1]
        if not closed:
            # extend backwards from the start if this began mid-chain
            back = [(t, o) for t, o in adjacency[k0] if not used[t]]
            if back:
                rest = walk(k0, back[0][0])
                chain = rest[::-1][:-1] + chain
                closed = chain[0] == chain[-1]
        lines.append((np.array([point_of[k] for k in chain]), closed))
    return lines


def _segment_count(points: np.ndarray, closed: bool, tol: float = 1e-6) -> int:
    """Number of straight segments after merging collinear neighbours."""
    if closed:
        points = points[:-1]
    scale = max(np.ptp(points, axis=0).max(), 1e-300) if len(points) else 1.0
    keep = [points[0]] if len(points) else []
    for p in points[1:]:
        if np.linalg.norm(p - keep[-1]) > 1e-12 * scale:
            keep.append(p)
    if closed and len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= 1e-12 * scale:
        keep.pop()
    pts = np.array(keep)
    if len(pts) < 2:
        return 0
    if closed:
        if len(pts) < 3:
            return 0
        d_in = pts - np.roll(pts, 1, axis=0)
        d_out = np.roll(pts, -1, axis=0) - pts
    else:
        d_in = pts[1:-1] - pts[:-2]
        d_out = pts[2:] - pts[1:-1]
    cross = np.linalg.norm(np.cross(d_in, d_out), axis=1)
    dot = np.einsum("ij,ij->i", d_in, d_out)
    norms = np.linalg.norm(d_in, axis=1) * np.linalg.norm(d_out, axis=1)
    corners = int(np.count_nonzero((cross > tol * norms) | (dot < 0)))
    if closed:
        return max(corners, 1)
    return corners + 1


def _slicing_axis(mesh: Mesh) -> np.ndarray:
    obb = geo.oriented_bounding_box(mesh)
    ext = obb.extents
    # ties within rounding go to the highest world index (Z first)
    best = max(range(3), key=lambda i: (round(ext[i] / ext.max(), 9), i))
    return obb.axes[best]


def _plane_offsets(mesh: Mesh, axis, n_planes: int, margin: float):
    proj = mesh.vertices @ axis
    lo, hi = proj.min(), proj.max()
    if n_planes == 1:
        fractions = np.array([0.5])
    else:
        fractions = margin + (1 - 2 * margin) * np.arange(n_planes) / (n_planes - 1)
    return lo + fractions * (hi - lo)


def silhouette_complexity(mesh: Mesh, n_planes: int = 8, axis=None, margin: float = 0.05) -> float:
    """Total straight-segment count of planar cross-sections.

    Planes are perpendicular to ``axis`` (default: longest OBB axis) and
    evenly spaced between ``margin`` and ``1 - margin`` of the extent.
    """
    if n_planes < 1:
        raise ValueError("n_planes must be >= 1")
    axis = _slicing_axis(mesh) if axis is None else np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    total = 0
    for offset in _plane_offsets(mesh, axis, n_planes, margin):
        total += sum(_segment_count(pts, closed) for pts, closed in cross_section(mesh, axis, offset))
    return float(total)


def multiview_silhouette_profile(mesh: Mesh, n_views: int = 8, n_planes: int = 8) -> np.ndarray:
    """Per-view silhouette complexity for rotations k*180/n_views degrees
    about Z (through the area centroid), sliced along the unrotated mesh's
    longest OBB axis held fixed in world space."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    axis = _slicing_axis(mesh)
    pivot = geo.area_centroid(mesh)
    out = []
    for k in range(n_views):
        rotated = mesh if k == 0 else geo.rotate(mesh, geo.rotation_z(np.pi * k / n_views), pivot)
        out.append(silhouette_complexity(rotated, n_planes, axis=axis))
    return np.array(out)


def multiview_silhouette_complexity(mesh: Mesh, n_views: int = 8, n_planes: int = 8) -> float:
    return float(multiview_silhouette_profile(mesh, n_views, n_planes).sum())


# ---------------------------------------------------------------------------
# skeleton

MAX_THINNING_ITERATIONS = 200


def zhang_suen_slices(volume: np.ndarray, max_iter: int = MAX_THINNING_ITERATIONS) -> np.ndarray:
    """Zhang-Suen thinning applied independently to every Z slice.

    Slices are 2D images indexed ``[row=x, col=y]``; all slices are thinned
    in lockstep with array shifts.
    """
    img = np.pad(np.asarray(volume, dtype=bool), ((1, 1), (1, 1), (0, 0)))
    for _ in range(max_iter):
        changed = False
        for step in (0, 1):
            p = img
            p2 = np.roll(p, 1, axis=0)    # (i-1, j)
            p6 = np.roll(p, -1, axis=0)   # (i+1, j)
            p4 = np.roll(p, -1, axis=1)   # (i, j+1)
            p8 = np.roll(p, 1, axis=1)    # (i, j-1)
            p3 = np.roll(p2, -1, axis=1)  # (i-1, j+1)
            p5 = np.roll(p6, -1, axis=1)  # (i+1, j+1)
            p7 = np.roll(p6, 1, axis=1)   # (i+1, j-1)
            p9 = np.roll(p2, 1, axis=1)   # (i-1, j-1)
            ring = [p2, p3, p4, p5, p6, p7, p8, p9]
            b = sum(n.astype(np.int8) for n in ring)
            a = sum((~ring[i] & ring[(i + 1) % 8]).astype(np.int8) for i in range(8))
            if step == 0:
                c = ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
            else:
                c = ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
            delete = p & (b >= 2) & (b <= 6) & (a == 1) & c
            if delete.any():
                img = p & ~delete
                changed = True
        if not changed:
            return img[1:-1, 1:-1]
    raise RuntimeError(f"thinning did not converge in {max_iter} iterations")


def skeleton_complexity(grid, method: str = "zhang-suen") -> float:
    """Occupied-voxel count of the thinned grid.

    ``method="zhang-suen"`` thins each Z slice in 2D; ``"volumetric"`` uses
    3D medial-axis thinning (scikit-image).
    """
    occ = grid.occupancy if isinstance(grid, VoxelGrid) else np.asarray(grid, dtype=bool)
    if not occ.any():
        raise geo.GeometryError("empty voxel grid")
    if method == "zhang-suen":
        skel = zhang_suen_slices(occ)
    elif method == "volumetric":
        from skimage.morphology import skeletonize
        skel = skeletonize(occ)
    else:
        raise ValueError(f"unknown skeleton method {method!r}")
    return float(np.count_nonzero(skel))


# ---------------------------------------------------------------------------

def extract_all(mesh: Mesh, config: FeatureConfig | None = None) -> FeatureVector:
    """All descriptors for one mesh. Failures are re-raised as
    :class:`FeatureError` naming the feature."""
    config = config or FeatureConfig()
    values = {}

    def run(name, fn):
        try:
            return fn()
        except FeatureError:
            raise
        except Exception as exc:
            raise FeatureError(name, exc) from exc

    cloud = run("curvature", lambda: geo.sample_point_cloud(mesh, config.n_points, config.seed,
                                                           mode=config.sample_mode))
    values["mean_curvature"], values["curvature_variance"], values["median_curvature"] = run(
        "curvature", lambda: curvature_features(cloud, config.k))
    values["surface_to_volume_ratio"] = run("surface_to_volume_ratio", lambda: surface_to_volume(mesh))
    values["convexity_ratio"] = run("convexity_ratio", lambda: convexity_ratio(mesh))
    values["hollow_ratio"] = 1.0 - values["convexity_ratio"]
    obb = run("aspect_ratio", lambda: geo.oriented_bounding_box(mesh))
    values["aspect_ratio_x"], values["aspect_ratio_y"], values["aspect_ratio_z"] = run(
        "aspect_ratio", lambda: aspect_ratios(obb))
    profile = run("multiview_silhouette_complexity",
                  lambda: multiview_silhouette_profile(mesh, config.n_views, config.n_planes))
    # view 0 is the unrotated mesh sliced along its own longest axis
    values["silhouette_complexity"] = float(profile[0])
    values["multiview_silhouette_complexity"] = float(profile.sum())
    # voxelize in the principal frame so the count does not depend on pose
    grid = run("skeleton_complexity",
               lambda: geo.voxelize(geo.to_principal_frame(mesh), config.resolution))
    values["skeleton_complexity"] = run("skeleton_complexity",
                                        lambda: skeleton_complexity(grid, config.skeleton_method))
    vec = FeatureVector(**values)
    bad = [f for f in FEATURE_FIELDS if not np.isfinite(getattr(vec, f))]
    if bad:
        raise FeatureError(bad[0], "non-finite value")
    return vec
