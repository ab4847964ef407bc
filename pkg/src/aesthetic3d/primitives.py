"""Closed, outward-oriented triangle meshes for canonical solids."""
from __future__ import annotations

import numpy as np

from .geometry import Mesh, merge_meshes, orient_faces

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # z-
    [4, 5, 6], [4, 6, 7],  # z+
    [0, 1, 5], [0, 5, 4],  # y-
    [3, 7, 6], [3, 6, 2],  # y+
    [0, 4, 7], [0, 7, 3],  # x-
    [1, 2, 6], [1, 6, 5],  # x+
])


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> Mesh:
    sx, sy, sz = np.asarray(size, dtype=float) / 2
    v = np.array([[-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],
                  [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz]])
    return Mesh(v + np.asarray(center, dtype=float), _BOX_FACES.copy())


def icosphere(subdivisions: int = 4, radius: float = 1.0) -> Mesh:
    t = (1 + 5 ** 0.5) / 2
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return orient_faces(Mesh(np.array(verts) * radius, np.array(faces)))


def lathe(profile, segments: int = 64, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Solid of revolution about Z.

    ``profile`` is a sequence of ``(radius, z)`` pairs running from the bottom
    axis point to the top axis point; interior points need radius > 0.
    Endpoints with radius 0 become poles, otherwise caps are added.
    """
    prof = np.asarray(profile, dtype=float)
    if len(prof) < 2 or np.any(prof[:, 0] < 0):
        raise ValueError("profile needs >= 2 points with radius >= 0")
    ang = 2 * np.pi * np.arange(segments) / segments
    verts, faces = [], []
    ring_index = []
    for r, z in prof:
        if r == 0:
            ring_index.append([len(verts)])
            verts.append([0.0, 0.0, z])
        else:
            ring_index.append(list(range(len(verts), len(verts) + segments)))
            verts.extend(np.column_stack([r * np.cos(ang), r * np.sin(ang), np.full(segments, z)]))
    for a, b in zip(ring_index[:-1], ring_index[1:]):
        for s in range(segments):
            s2 = (s + 1) % segments
            if len(a) == 1 and len(b) == 1:
                continue
            if len(a) == 1:
                faces.append([a[0], b[s], b[s2]])
            elif len(b) == 1:
                faces.append([a[s], b[0], a[s2]])
            else:
                faces.append([a[s], a[s2], b[s2]])
                faces.append([a[s], b[s2], b[s]])
    for ring, z in ((ring_index[0], prof[0, 1]), (ring_index[-1], prof[-1, 1])):
        if len(ring) > 1:
            c = len(verts)
            verts.append([0.0, 0.0, z])
            faces.extend([c, ring[s], ring[(s + 1) % segments]] for s in range(segments))
    mesh = Mesh(np.asarray(verts) + np.asarray(center, dtype=float), np.asarray(faces))
    return orient_faces(mesh)


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 64, center=(0.0, 0.0, 0.0)) -> Mesh:
    h = height / 2
    return lathe([(radius, -h), (radius, h)], segments, center)


def torus(major: float = 1.0, minor: float = 0.3, segments: int = 96, tube_segments: int = 48) -> Mesh:
    u = 2 * np.pi * np.arange(segments) / segments
    w = 2 * np.pi * np.arange(tube_segments) / tube_segments
    uu, ww = np.meshgrid(u, w, indexing="ij")
    rr = major + minor * np.cos(ww)
    verts = np.stack([rr * np.cos(uu), rr * np.sin(uu), minor * np.sin(ww)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(segments):
        for j in range(tube_segments):
            a = i * tube_segments + j
            b = ((i + 1) % segments) * tube_segments + j
            c = ((i + 1) % segments) * tube_segments + (j + 1) % tube_segments
            d = i * tube_segments + (j + 1) % tube_segments
            faces += [[a, b, c], [a, c, d]]
    return orient_faces(Mesh(verts, np.array(faces)))


def cavity_box(size=(1.0, 1.0, 1.0), cavity=(0.5, 0.5, 0.5)) -> Mesh:
    """Box with a centered box-shaped pocket open through the top (+Z) face."""
    sx, sy, sz = np.asarray(size, dtype=float) / 2
    cx, cy = cavity[0] / 2, cavity[1] / 2
    depth = cavity[2]
    if not (0 < cx < sx and 0 < cy < sy and 0 < depth < 2 * sz):
        raise ValueError("cavity must fit strictly inside the box")
    zf = sz - depth
    v = np.array([
        [-sx, -sy, -sz], [sx, -sy, -sz], [sx, sy, -sz], [-sx, sy, -sz],  # 0-3 bottom
        [-sx, -sy, sz], [sx, -sy, sz], [sx, sy, sz], [-sx, sy, sz],      # 4-7 top outer
        [-cx, -cy, sz], [cx, -cy, sz], [cx, cy, sz], [-cx, cy, sz],      # 8-11 top inner
        [-cx, -cy, zf], [cx, -cy, zf], [cx, cy, zf], [-cx, cy, zf],      # 12-15 floor
    ])
    f = [
        [0, 2, 1], [0, 3, 2],
        [0, 1, 5], [0, 5, 4], [3, 7, 6], [3, 6, 2], [0, 4, 7], [0, 7, 3], [1, 2, 6], [1, 6, 5],
        # top ring
        [4, 5, 9], [4, 9, 8], [5, 6, 10], [5, 10, 9], [6, 7, 11], [6, 11, 10], [7, 4, 8], [7, 8, 11],
        # pocket walls and floor
        [8, 9, 13], [8, 13, 12], [9, 10, 14], [9, 14, 13], [10, 11, 15], [10, 15, 14],
        [11, 8, 12], [11, 12, 15], [12, 13, 14], [12, 14, 15],
    ]
    return orient_faces(Mesh(v, np.array(f)))


def prong_union(k: int, height: float = 1.0, post_radius: float = 0.08, arm_length: float = 0.36,
                arm_width: float = 0.06, arm_thickness: float = 0.06, segments: int = 24) -> Mesh:
    """Vertical post with ``k`` horizontal arms radiating from its mid-height.

    Arms start just outside the post so the parts are disjoint closed shells
    (exact divergence-theorem volume); the gap is far below voxel size.
    """
    if not 0 <= k <= 6:
        raise ValueError("k must be in [0, 6]")
    if arm_width >= post_radius:
        raise ValueError("arm_width must be below post_radius so arms stay disjoint")
    parts = [cylinder(post_radius, height, segments)]
    gap = 1e-3 * height
    r0 = post_radius + gap
    for i in range(k):
        theta = 2 * np.pi * i / k
        arm = box((arm_length, arm_width, arm_thickness), center=(r0 + arm_length / 2, 0.0, 0.0))
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        parts.append(Mesh(arm.vertices @ rot.T, arm.faces))
    return merge_meshes(parts)


def star_prism(points: int = 8, outer: float = 0.5, inner: float = 0.3, height: float = 1.0) -> Mesh:
    """Extruded star polygon (2 * points profile vertices)."""
    n = 2 * points
    ang = np.pi * np.arange(n) / points
    rad = np.where(np.arange(n) % 2 == 0, outer, inner)
    ring = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    h = height / 2
    verts = np.concatenate([np.column_stack([ring, np.full(n, -h)]),
                            np.column_stack([ring, np.full(n, h)]),
                            [[0, 0, -h], [0, 0, h]]])
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [[i, j, n + j], [i, n + j, n + i], [2 * n, j, i], [2 * n + 1, n + i, n + j]]
    return orient_faces(Mesh(verts, np.array(faces)))
