"""Triangle-mesh kernel: I/O, normalization, sampling, hulls, boxes and voxels.

Meshes are plain numpy arrays wrapped in small dataclasses. Every randomized
routine takes an explicit seed so results are a pure function of
``(input, seed)``.
"""
from __future__ import annotations

import logging
import os
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull
from scipy.spatial import QhullError

log = logging.getLogger(__name__)

__all__ = [
    "GeometryError", "MeshFormatError", "Mesh", "PointCloud", "VoxelGrid", "Obb",
    "VolumeEstimate", "load_mesh", "save_obj", "obj_text", "face_areas", "face_normals",
    "vertex_normals", "is_watertight", "orient_faces", "normalize",
    "sample_point_cloud", "convex_hull", "oriented_bounding_box", "voxelize",
    "mesh_volume", "volume_estimate", "mesh_surface_area", "rotate",
    "merge_meshes", "principal_frame", "to_principal_frame", "voxel_mesh",
]

DEFAULT_RESOLUTION = 64


class GeometryError(ValueError):
    """Raised for degenerate or otherwise unusable geometry."""


class MeshFormatError(GeometryError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        where = f"{self.path}:{lineno}" if lineno else self.path
        super().__init__(f"{where}: {message}")


@dataclass
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None
    dropped_faces: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")
        if self.normals is None and len(self.faces):
            self.normals = vertex_normals(self)

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def copy(self) -> "Mesh":
        return Mesh(self.vertices.copy(), self.faces.copy(),
                    None if self.normals is None else self.normals.copy(),
                    self.dropped_faces)


@dataclass
class PointCloud:
    points: np.ndarray
    face_index: np.ndarray

    def __len__(self):
        return len(self.points)


@dataclass
class VoxelGrid:
    """Occupancy grid. ``occupancy[i, j, k]`` covers the cell whose lower
    corner is ``origin + cell_size * (i, j, k)``."""

    occupancy: np.ndarray
    origin: np.ndarray
    cell_size: float
    surface: np.ndarray = field(repr=False, default=None)
    filled: bool = True

    @property
    def resolution(self) -> tuple[int, int, int]:
        return tuple(self.occupancy.shape)

    def volume(self) -> float:
        """Occupied volume counting surface cells as half full."""
        surface = self.surface if self.surface is not None else np.zeros_like(self.occupancy)
        interior = np.count_nonzero(self.occupancy & ~surface)
        return (interior + 0.5 * np.count_nonzero(surface)) * self.cell_size ** 3


@dataclass
class Obb:
    """PCA-aligned box.

    ``axes[i]`` is the principal direction assigned to world axis ``i`` (the
    one it is most parallel to, signed to point the same way) and
    ``extents[i]`` is the box length along it. Aspect ratios index extents by
    this X/Y/Z convention.
    """

    center: np.ndarray
    axes: np.ndarray
    extents: np.ndarray

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extents))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                         dtype=float)
        return self.center + (signs * self.extents / 2) @ self.axes

    def as_mesh(self) -> Mesh:
        c = self.corners()
        faces = [[0, 2, 3], [0, 3, 1], [4, 5, 7], [4, 7, 6], [0, 1, 5], [0, 5, 4],
                 [2, 6, 7], [2, 7, 3], [0, 4, 6], [0, 6, 2], [1, 3, 7], [1, 7, 5]]
        return orient_faces(Mesh(c, faces))


class VolumeEstimate(NamedTuple):
    value: float
    provenance: str  # "divergence" or "voxel"


# ---------------------------------------------------------------------------
# I/O

def load_mesh(path) -> Mesh:
    """Read an OBJ or OFF file. Polygons are fan-triangulated and zero-area
    faces dropped (the count is kept on ``Mesh.dropped_faces``)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        vertices, faces = _read_obj(path)
    elif ext == ".off":
        vertices, faces = _read_off(path)
    else:
        raise MeshFormatError(path, None, f"unsupported extension {ext!r}")
    if not len(vertices) or not len(faces):
        raise MeshFormatError(path, None, "empty mesh")
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    keep = _nondegenerate(vertices, faces)
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        log.info("%s: dropped %d degenerate faces", path, dropped)
    faces = faces[keep]
    if not len(faces):
        raise MeshFormatError(path, None, "empty mesh (all faces degenerate)")
    return Mesh(vertices, faces, dropped_faces=dropped)


def _obj_index(token, n_vertices, path, lineno):
    try:
        idx = int(token.split("/")[0])
    except ValueError:
        raise MeshFormatError(path, lineno, f"bad face index {token!r}") from None
    idx = idx - 1 if idx > 0 else n_vertices + idx
    if not 0 <= idx < n_vertices:
        raise MeshFormatError(path, lineno, f"face index {token} out of range "
                              f"({n_vertices} vertices defined)")
    return idx


def _read_obj(path):
    vertices, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                try:
                    vertices.append([float(t) for t in parts[1:4]])
                except ValueError:
                    raise MeshFormatError(path, lineno, "bad vertex record") from None
                if len(vertices[-1]) != 3:
                    raise MeshFormatError(path, lineno, "vertex needs 3 coordinates")
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise MeshFormatError(path, lineno, "face needs at least 3 indices")
                idx = [_obj_index(t, len(vertices), path, lineno) for t in parts[1:]]
                faces.extend([idx[0], idx[i], idx[i + 1]] for i in range(1, len(idx) - 1))
            # vn/vt/usemtl/etc: normals are recomputed, materials are out of scope
    return vertices, faces


def _read_off(path):
    with open(path) as fh:
        lines = [(n, ln.split("#")[0].split()) for n, ln in enumerate(fh, 1)]
    lines = [(n, toks) for n, toks in lines if toks]
    if not lines or not lines[0][1][0].upper().endswith("OFF"):
        raise MeshFormatError(path, 1, "missing OFF header")
    header = lines[0][1][1:]
    pos = 1
    if not header:
        if len(lines) < 2:
            raise MeshFormatError(path, None, "missing counts line")
        header = lines[1][1]
        pos = 2
    try:
        nv, nf = int(header[0]), int(header[1])
    except (ValueError, IndexError):
        raise MeshFormatError(path, lines[pos - 1][0], "bad counts line") from None
    if len(lines) < pos + nv + nf:
        raise MeshFormatError(path, None, "file truncated")
    vertices, faces = [], []
    for lineno, toks in lines[pos:pos + nv]:
        try:
            vertices.append([float(t) for t in toks[:3]])
        except ValueError:
            raise MeshFormatError(path, lineno, "bad vertex record") from None
    for lineno, toks in lines[pos + nv:pos + nv + nf]:
        try:
            k = int(toks[0])
            idx = [int(t) for t in toks[1:1 + k]]
        except (ValueError, IndexError):
            raise MeshFormatError(path, lineno, "bad face record") from None
        if k < 3 or len(idx) != k:
            raise MeshFormatError(path, lineno, "bad face record")
        for i in idx:
            if not 0 <= i < nv:
                raise MeshFormatError(path, lineno, f"face index {i} out of range ({nv} vertices)")
        faces.extend([idx[0], idx[i], idx[i + 1]] for i in range(1, k - 1))
    return vertices, faces


def obj_text(mesh: Mesh, header: str | None = None) -> str:
    lines = [f"# {ln}" for ln in header.splitlines()] if header else []
    lines += ["v %.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(f) for f in mesh.faces + 1]
    return "\n".join(lines) + "\n"


def save_obj(mesh: Mesh, path, header: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(obj_text(mesh, header))


# ---------------------------------------------------------------------------
# Basic quantities

def _nondegenerate(vertices, faces, tol=0.0):
    tri = vertices[faces]
    area2 = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    distinct = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return distinct & (area2 > tol)


def _cross(tri):
    return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


def face_areas(mesh: Mesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(_cross(mesh.triangles), axis=1)


def face_normals(mesh: Mesh) -> np.ndarray:
    n = _cross(mesh.triangles)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted average of incident face normals, unit length."""
    weighted = _cross(mesh.triangles)  # length = 2 * area
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], weighted)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.zeros_like(acc)
    ok = norm[:, 0] > 0
    out[ok] = acc[ok] / norm[ok]
    return out


def mesh_surface_area(mesh: Mesh) -> float:
    return float(face_areas(mesh).sum())


def _edge_table(faces):
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    return directed, undirected


def is_watertight(mesh: Mesh) -> bool:
    """Closed 2-manifold test: every edge is shared by exactly two faces."""
    if not len(mesh.faces):
        return False
    _, undirected = _edge_table(mesh.faces)
    _, counts = np.unique(undirected, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def _signed_volume(vertices, faces):
    tri = vertices[faces]
    return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def orient_faces(mesh: Mesh) -> Mesh:
    """Make face winding consistent by propagating orientation along a
    spanning tree of the face adjacency graph, then flip each closed component
    so that its signed volume is positive."""
    faces = mesh.faces.copy()
    m = len(faces)
    owners = defaultdict(list)
    for fi, f in enumerate(faces):
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            owners[(min(a, b), max(a, b))].append(fi)

    def directed_has(f, a, b):
        return (f[0] == a and f[1] == b) or (f[1] == a and f[2] == b) or (f[2] == a and f[0] == b)

    seen = np.zeros(m, dtype=bool)
    components = []
    for start in range(m):
        if seen[start]:
            continue
        seen[start] = True
        comp = [start]
        queue = deque([start])
        while queue:
            fi = queue.popleft()
            f = faces[fi]
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                nbrs = owners[(min(a, b), max(a, b))]
                if len(nbrs) != 2:
                    continue  # boundary or non-manifold edge: no propagation
                gi = nbrs[0] if nbrs[1] == fi else nbrs[1]
                if seen[gi]:
                    continue
                if directed_has(faces[gi], a, b):
                    faces[gi] = faces[gi][::-1]
                seen[gi] = True
                comp.append(gi)
                queue.append(gi)
        components.append(np.array(comp))

    for comp in components:
        if _signed_volume(mesh.vertices, faces[comp]) < 0:
            faces[comp] = faces[comp][:, ::-1]
    return Mesh(mesh.vertices.copy(), faces, dropped_faces=mesh.dropped_faces)


def volume_estimate(mesh: Mesh, resolution: int = DEFAULT_RESOLUTION) -> VolumeEstimate:
    """Enclosed volume. Watertight meshes use the divergence theorem (signed
    tetrahedra against the origin, after winding repair); open meshes fall
    back to a voxel count and say so in ``provenance``."""
    if is_watertight(mesh):
        fixed = orient_faces(mesh)
        return VolumeEstimate(abs(_signed_volume(fixed.vertices, fixed.faces)), "divergence")
    grid = voxelize(mesh, resolution, fill="always")
    return VolumeEstimate(grid.volume(), "voxel")


def mesh_volume(mesh: Mesh) -> float:
    return volume_estimate(mesh).value


def area_centroid(mesh: Mesh) -> np.ndarray:
    areas = face_areas(mesh)
    centers = mesh.triangles.mean(axis=1)
    return (centers * areas[:, None]).sum(axis=0) / areas.sum()


def rotate(mesh: Mesh, rotation: np.ndarray, pivot=None) -> Mesh:
    rotation = np.asarray(rotation, dtype=float)
    pivot = np.zeros(3) if pivot is None else np.asarray(pivot, dtype=float)
    v = (mesh.vertices - pivot) @ rotation.T + pivot
    return Mesh(v, mesh.faces.copy(), dropped_faces=mesh.dropped_faces)


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def merge_meshes(meshes) -> Mesh:
    """Concatenate meshes without welding vertices."""
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return Mesh(np.concatenate(verts), np.concatenate(faces))


def normalize(mesh: Mesh, category_scale: float = 1.0) -> Mesh:
    """Repair winding, move the area centroid to the origin and scale
    uniformly so the oriented bounding box diagonal equals ``category_scale``.
    Normals are recomputed."""
    if not len(mesh.faces):
        raise GeometryError("cannot normalize an empty mesh")
    if category_scale <= 0:
        raise ValueError("category_scale must be positive")
    if not face_areas(mesh).sum() > 0:
        raise GeometryError("degenerate mesh: zero surface area")
    fixed = orient_faces(mesh)
    v = fixed.vertices - area_centroid(fixed)
    diag = oriented_bounding_box(Mesh(v, fixed.faces)).diagonal
    if not diag > 0:
        raise GeometryError("degenerate mesh: zero extent")
    out = Mesh(v * (category_scale / diag), fixed.faces, dropped_faces=mesh.dropped_faces)
    # the second pass absorbs rounding so normalize(normalize(m)) == normalize(m)
    out.vertices -= area_centroid(out)
    out.normals = vertex_normals(out)
    return out


# ---------------------------------------------------------------------------
# Derived point sets and solids

def sample_point_cloud(mesh: Mesh, n: int, seed: int = 0, mode: str = "surface") -> PointCloud:
    """Area-weighted uniform surface samples (``mode="surface"``) or the mesh
    vertices themselves (``mode="vertices"``, ``n`` and ``seed`` ignored)."""
    if not len(mesh.faces):
        raise GeometryError("cannot sample an empty mesh")
    if mode == "vertices":
        face_of_vertex = np.full(len(mesh.vertices), -1, dtype=np.int64)
        for k in (2, 1, 0):
            face_of_vertex[mesh.faces[:, k]] = np.arange(len(mesh.faces))
        used = face_of_vertex >= 0
        return PointCloud(mesh.vertices[used].copy(), face_of_vertex[used])
    if mode != "surface":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = face_areas(mesh)
    cdf = np.cumsum(areas)
    face_idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    face_idx = np.minimum(face_idx, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    tri = mesh.triangles[face_idx]
    points = np.einsum("ij,ijk->ik", bary, tri)
    return PointCloud(points, face_idx)


def convex_hull(points) -> Mesh:
    """Convex hull as an outward-oriented closed triangle mesh."""
    pts = points.points if isinstance(points, PointCloud) else points
    pts = pts.vertices if isinstance(pts, Mesh) else pts
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise GeometryError("convex hull needs at least 4 points")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise GeometryError(f"degenerate (coplanar or collinear) input: {exc}") from None
    simplices = hull.simplices.copy()
    tri = pts[simplices]
    flip = np.einsum("ij,ij->i", _cross(tri), hull.equations[:, :3]) < 0
    simplices[flip] = simplices[flip][:, ::-1]
    used, inverse = np.unique(simplices, return_inverse=True)
    return Mesh(pts[used], inverse.reshape(-1, 3))


def _principal_axes(points):
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / len(points)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[-1], np.finfo(float).tiny)
    tol = 1e-9 * scale
    # group (near-)equal eigenvalues: inside a degenerate eigenspace the
    # eigenvectors are arbitrary, so use the world axes projected into it
    groups, current = [], [0]
    for i in range(1, 3):
        if evals[i] - evals[current[-1]] <= tol:
            current.append(i)
        else:
            groups.append(current)
            current = [i]
    groups.append(current)
    axes = []
    for g in groups:
        if len(g) == 1:
            axes.append(evecs[:, g[0]])
        elif len(g) == 2:
            basis = evecs[:, g]
            axes.extend(basis @ d for d in _min_rectangle_axes(centered @ basis))
        else:
            axes.extend(_min_box_axes(centered))
    return np.array(axes)


# Inside a degenerate eigenspace the eigenvectors are arbitrary. The tightest
# bounding box fixes the frame instead; its remaining ties are symmetries of
# the shape, so whichever one is picked gives the same posed geometry.

def _min_rectangle_axes(q):
    """In-plane unit axes of the smallest-area bounding rectangle of the 2D
    points ``q``, shorter extent first."""
    try:
        hull = q[ConvexHull(q).vertices]
    except QhullError:
        hull = q
    edges = np.roll(hull, -1, axis=0) - hull
    lengths = np.linalg.norm(edges, axis=1)
    keep = lengths > 1e-12 * max(lengths.max(), np.finfo(float).tiny)
    if not keep.any():
        return np.eye(2)
    u = edges[keep] / lengths[keep, None]
    v = np.column_stack([-u[:, 1], u[:, 0]])
    eu, ev = np.ptp(hull @ u.T, axis=0), np.ptp(hull @ v.T, axis=0)
    area = eu * ev
    k = int(np.flatnonzero(area <= area.min() * (1 + 1e-9))[0])
    return (u[k], v[k]) if eu[k] <= ev[k] else (v[k], u[k])


MAX_BOX_NORMALS = 64


def _min_box_axes(pts):
    """Axes of the smallest-volume box with a face flush to one of the largest
    hull facets, ascending extent."""
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return np.eye(3)
    normals = hull.equations[:, :3]
    keys = np.round(normals, 9)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    tri_area = 0.5 * np.linalg.norm(_cross(pts[hull.simplices]), axis=1)
    facet_area = np.bincount(inverse.ravel(), weights=tri_area)
    order = np.lexsort((first, -np.round(facet_area, 12)))[:MAX_BOX_NORMALS]
    best = None
    for n in normals[first[order]]:
        n = n / np.linalg.norm(n)
        helper = np.eye(3)[int(np.argmin(np.abs(n)))]
        e1 = np.cross(n, helper)
        e1 /= np.linalg.norm(e1)
        plane = np.array([e1, np.cross(n, e1)])
        a, b = (d @ plane for d in _min_rectangle_axes(pts @ plane.T))
        box = np.array([a, b, n])
        extents = np.ptp(pts @ box.T, axis=0)
        vol = float(np.prod(extents))
        if best is None or vol < best[0] * (1 - 1e-9):
            best = (vol, box[np.argsort(extents, kind="stable")])
    return list(best[1])


def _assign_world(axes):
    """Map principal axes to world X/Y/Z by largest |dot|, ties by index."""
    dots = np.abs(axes)  # axes[i] . e_j == axes[i, j]
    pairs = sorted(((-round(dots[i, j], 12), j, i) for i in range(3) for j in range(3)))
    out = np.zeros((3, 3))
    used_axis, used_world = set(), set()
    for _, j, i in pairs:
        if i in used_axis or j in used_world:
            continue
        v = axes[i]
        out[j] = v if v[j] >= 0 else -v
        used_axis.add(i)
        used_world.add(j)
    return out


def principal_frame(mesh) -> tuple[np.ndarray, np.ndarray]:
    """Pose-independent frame ``(rotation, center)``: rows of ``rotation`` are
    the principal axes in ascending variance (so local Z is the dominant
    direction), each signed so the vertex projections have non-negative
    skewness. Local coordinates are ``(v - center) @ rotation.T``."""
    pts = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh, dtype=float)
    center = pts.mean(axis=0)
    axes = _principal_axes(pts)
    local = (pts - center) @ axes.T
    scale = np.abs(local).max() or 1.0
    skew = ((local / scale) ** 3).mean(axis=0)
    for i in range(3):
        if skew[i] < -1e-9:
            axes[i] = -axes[i]
    if np.linalg.det(axes) < 0:
        # keep a proper rotation; flip the axis with the weakest skew signal
        i = int(np.argmin(np.abs(skew)))
        axes[i] = -axes[i]
    return axes, center


def oriented_bounding_box(mesh) -> Obb:
    """PCA box over the vertex positions (not the minimum-volume box)."""
    pts = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh, dtype=float)
    if len(pts) < 2:
        raise GeometryError("oriented bounding box needs at least 2 vertices")
    axes = _assign_world(_principal_axes(pts))
    local = pts @ axes.T
    lo, hi = local.min(axis=0), local.max(axis=0)
    center = ((lo + hi) / 2) @ axes
    return Obb(center=center, axes=axes, extents=hi - lo)


def _lattice_points(tri, step):
    """Points of a parallelogram lattice clipped to each triangle, plus the
    third edge, with spacing <= ``step`` along both lattice directions."""
    # put the shortest edge first so skinny triangles get few lattice rows
    lengths = np.linalg.norm(tri - np.roll(tri, -1, axis=1), axis=2)  # |v0v1|, |v1v2|, |v2v0|
    shift = np.argmin(lengths, axis=1)
    order = (shift[:, None] + np.arange(3)) % 3
    tri = np.take_along_axis(tri, order[:, :, None], axis=1)
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    e3 = tri[:, 2] - tri[:, 1]
    na = np.maximum(1, np.ceil(np.linalg.norm(e1, axis=1) / step)).astype(np.int64)
    nb = np.maximum(1, np.ceil(np.linalg.norm(e2, axis=1) / step)).astype(np.int64)
    nc = np.maximum(1, np.ceil(np.linalg.norm(e3, axis=1) / step)).astype(np.int64)
    counts = (na + 1) * (nb + 1)
    tid = np.repeat(np.arange(len(tri)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    i, j = local // (nb[tid] + 1), local % (nb[tid] + 1)
    a, b = i / na[tid], j / nb[tid]
    keep = a + b <= 1.0 + 1e-12
    tid, a, b = tid[keep], a[keep], b[keep]
    inner = tri[tid, 0] + a[:, None] * e1[tid] + b[:, None] * e2[tid]
    ctid = np.repeat(np.arange(len(tri)), nc + 1)
    clocal = np.arange(len(ctid)) - np.repeat(np.cumsum(nc + 1) - (nc + 1), nc + 1)
    c = clocal / nc[ctid]
    edge = tri[ctid, 1] + c[:, None] * e3[ctid]
    return np.concatenate([inner, edge])


def _rasterize_surface(mesh: Mesh, origin, cell, shape, spacing=0.25):
    """Mark every cell touched by a dense lattice on each face."""
    surface = np.zeros(shape, dtype=bool)
    tri = mesh.triangles
    step = spacing * cell
    approx = np.linalg.norm(tri[:, 1] - tri[:, 0], axis=1) * np.linalg.norm(tri[:, 2] - tri[:, 0], axis=1)
    cost = np.cumsum(approx / step ** 2 + 1)
    bounds = np.searchsorted(cost, np.arange(0, cost[-1], 2_000_000.0)[1:])
    for sel in np.split(np.arange(len(tri)), bounds):
        if not len(sel):
            continue
        pts = _lattice_points(tri[sel], step)
        idx = np.floor((pts - origin) / cell).astype(np.int64)
        idx = np.clip(idx, 0, np.array(shape) - 1)
        surface[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return surface


def to_principal_frame(mesh: Mesh) -> Mesh:
    rotation, center = principal_frame(mesh)
    return Mesh((mesh.vertices - center) @ rotation.T, mesh.faces.copy())


def voxelize(mesh: Mesh, resolution: int = DEFAULT_RESOLUTION, fill: str = "auto") -> VoxelGrid:
    """Cubic occupancy grid with ``resolution`` cells per axis.

    The mesh's largest bounding-box extent spans ``resolution - 3`` cells,
    centered, so there is empty margin for the flood fill. Surface cells come
    from rasterizing the faces; the interior is everything that is neither
    surface nor 6-connected to the grid boundary. With ``fill="auto"`` open
    meshes keep surface-only occupancy (``filled=False``).
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    if not len(mesh.faces):
        raise GeometryError("cannot voxelize an empty mesh")
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise GeometryError("degenerate mesh: zero extent")
    cell = extent / (resolution - 3)
    origin = (lo + hi) / 2 - cell * resolution / 2
    shape = (resolution,) * 3
    surface = _rasterize_surface(mesh, origin, cell, shape)
    do_fill = fill == "always" or (fill == "auto" and is_watertight(mesh))
    if do_fill:
        labels, _ = ndimage.label(~surface)
        border = np.unique(np.concatenate([
            labels[0].ravel(), labels[-1].ravel(), labels[:, 0].ravel(),
            labels[:, -1].ravel(), labels[:, :, 0].ravel(), labels[:, :, -1].ravel()]))
        outside = np.isin(labels, border[border > 0])
        occupancy = ~outside
    else:
        occupancy = surface.copy()
    return VoxelGrid(occupancy=occupancy, origin=origin, cell_size=cell,
                     surface=surface, filled=do_fill)


def voxel_mesh(grid: VoxelGrid) -> Mesh:
    """Boundary faces of the occupied cells, for debugging dumps."""
    occ = np.pad(grid.occupancy, 1)
    quads = []
    corner = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                       [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
    face_quads = {(0, -1): [0, 4, 7, 3], (0, 1): [1, 2, 6, 5], (1, -1): [0, 1, 5, 4],
                  (1, 1): [3, 7, 6, 2], (2, -1): [0, 3, 2, 1], (2, 1): [4, 5, 6, 7]}
    for (axis, sign), q in face_quads.items():
        neighbour = np.roll(occ, -sign, axis=axis)
        cells = np.argwhere(occ & ~neighbour) - 1
        for c in cells:
            quads.append(c + corner[q])
    if not quads:
        raise GeometryError("empty voxel grid")
    # weld on the integer lattice so neighbouring quads share vertices
    lattice, index = np.unique(np.array(quads).reshape(-1, 3), axis=0, return_inverse=True)
    index = index.reshape(-1, 4)
    faces = np.concatenate([index[:, [0, 1, 2]], index[:, [0, 2, 3]]])
    return Mesh(lattice * grid.cell_size + grid.origin, faces)
