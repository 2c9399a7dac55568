"""Conforming triangulations with boundary and material tags.

Triangles are stored counterclockwise with the *newest vertex* in local
position 0, so the refinement edge of every triangle is the edge opposite
local vertex 0, ``(t[1], t[2])``.  Local edge ``i`` is always the edge
opposite local vertex ``i``.
"""
from __future__ import annotations

from functools import cached_property
from typing import Mapping, NamedTuple, Sequence

import numpy as np

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

TAG_NAMES = {INTERIOR: "interior", DIRICHLET: "dirichlet", NEUMANN: "neumann"}
_TAG_CODES = {"D": DIRICHLET, "N": NEUMANN, "dirichlet": DIRICHLET, "neumann": NEUMANN,
              DIRICHLET: DIRICHLET, NEUMANN: NEUMANN}

SIDES = ("bottom", "right", "top", "left")


def tag_code(tag) -> int:
    """Normalize a boundary tag (``'D'``, ``'N'``, name or code) to its integer code."""
    key = tag.strip() if isinstance(tag, str) else tag
    if isinstance(key, str) and key.lower() in _TAG_CODES:
        key = key.lower()
    try:
        return _TAG_CODES[key]
    except KeyError:
        raise ValueError(f"unknown boundary tag {tag!r}; expected 'D' or 'N'") from None


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _edge_keys(a, b, nv):
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    return lo * nv + hi


class Facets(NamedTuple):
    """Edge table of a mesh.

    ``elements[:, 1]`` and ``local[:, 1]`` are ``-1`` on boundary facets.  For
    interior facets ``elements[:, 0] < elements[:, 1]`` and ``normals`` is the
    unit normal pointing out of ``elements[:, 0]``.
    """

    vertices: np.ndarray
    elements: np.ndarray
    local: np.ndarray
    tags: np.ndarray
    normals: np.ndarray
    h: np.ndarray


class ShapeStats(NamedTuple):
    min_angle: float
    max_ratio: float


class Mesh:
    """Immutable 2D triangulation.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array, counterclockwise, newest vertex first
    materials : (nt,) int array of material ids
    boundary_edges : (nb, 2) int array of boundary edges
    boundary_tags : (nb,) int array of ``DIRICHLET``/``NEUMANN`` codes
    """

    def __init__(self, vertices, triangles, materials=None, boundary_edges=None,
                 boundary_tags=None):
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) == 0:
            raise ValueError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise ValueError("triangle references a vertex index out of range")
        if materials is None:
            materials = np.zeros(len(triangles), dtype=np.int64)
        materials = np.asarray(materials, dtype=np.int64).reshape(-1)
        if materials.shape != (len(triangles),):
            raise ValueError("need one material id per triangle")
        if boundary_edges is None:
            boundary_edges = np.zeros((0, 2), dtype=np.int64)
            boundary_tags = np.zeros(0, dtype=np.int64)
        boundary_edges = np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2)
        boundary_tags = np.asarray(boundary_tags, dtype=np.int64).reshape(-1)
        if len(boundary_edges) != len(boundary_tags):
            raise ValueError("need one tag per boundary edge")

        self.vertices = _readonly(vertices)
        self.triangles = _readonly(triangles)
        self.materials = _readonly(materials)
        self.boundary_edges = _readonly(boundary_edges)
        self.boundary_tags = _readonly(boundary_tags)

        bad = np.flatnonzero(self.areas <= 0.0)
        if len(bad):
            raise ValueError(f"triangle {bad[0]} has non-positive signed area "
                             "(clockwise or degenerate)")
        self.facets  # validates conformity and boundary tagging

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_facets(self) -> int:
        return len(self.facets.tags)

    @property
    def refinement_edges(self) -> np.ndarray:
        """(nt, 2) vertex pairs of the refinement edge of each triangle."""
        return self.triangles[:, 1:]

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(nt, 2, 2) affine map Jacobians, columns ``v1 - v0`` and ``v2 - v0``."""
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)

    @cached_property
    def inverse_jacobians(self) -> np.ndarray:
        return np.linalg.inv(self.jacobians)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """(nt, 3) lengths of local edges (edge i opposite vertex i)."""
        p = self.vertices[self.triangles]
        return np.stack([np.linalg.norm(p[:, (i + 2) % 3] - p[:, (i + 1) % 3], axis=1)
                         for i in range(3)], axis=1)

    @cached_property
    def h(self) -> np.ndarray:
        """Element diameters h_K (longest edge)."""
        return self.edge_lengths.max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.h.max())

    @cached_property
    def edge_ids(self) -> np.ndarray:
        """(nt, 3) facet index of each local edge."""
        self.facets
        return self._edge_ids

    @cached_property
    def facets(self) -> Facets:
        tri = self.triangles
        nt, nv = len(tri), len(self.vertices)
        a = np.concatenate([tri[:, (i + 1) % 3] for i in range(3)])
        b = np.concatenate([tri[:, (i + 2) % 3] for i in range(3)])
        owner = np.tile(np.arange(nt), 3)
        loc = np.repeat(np.arange(3), nt)
        keys = _edge_keys(a, b, nv)
        uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
        if counts.max() > 2:
            raise ValueError("non-manifold mesh: an edge is shared by more than two triangles")
        nf = len(uniq)
        order = np.lexsort((owner, inv))
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv[order][1:] != inv[order][:-1]
        elements = -np.ones((nf, 2), dtype=np.int64)
        local = -np.ones((nf, 2), dtype=np.int64)
        elements[inv[order][first], 0] = owner[order][first]
        local[inv[order][first], 0] = loc[order][first]
        elements[inv[order][~first], 1] = owner[order][~first]
        local[inv[order][~first], 1] = loc[order][~first]

        edge_ids = np.empty((nt, 3), dtype=np.int64)
        edge_ids[owner, loc] = inv
        self._edge_ids = _readonly(edge_ids)

        e0, l0 = elements[:, 0], local[:, 0]
        va = tri[e0, (l0 + 1) % 3]
        vb = tri[e0, (l0 + 2) % 3]
        d = self.vertices[vb] - self.vertices[va]
        h = np.linalg.norm(d, axis=1)
        normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / h[:, None]

        tags = np.full(nf, INTERIOR, dtype=np.int64)
        bnd = np.flatnonzero(elements[:, 1] < 0)
        if len(bnd):
            known = _edge_keys(self.boundary_edges[:, 0], self.boundary_edges[:, 1], nv)
            srt = np.argsort(known)
            pos = np.searchsorted(known[srt], uniq[bnd])
            if len(known):
                pos = np.minimum(pos, len(known) - 1)
                hit = known[srt][pos] == uniq[bnd]
            else:
                hit = np.zeros(len(bnd), dtype=bool)
            if not np.all(hit):
                f = bnd[np.flatnonzero(~hit)[0]]
                raise ValueError(f"boundary edge {tuple(int(v) for v in (va[f], vb[f]))} "
                                 "has no boundary tag")
            tags[bnd] = self.boundary_tags[srt][pos]
        return Facets(*(_readonly(x) for x in (np.stack([va, vb], axis=1), elements, local,
                                               tags, normals, h)))

    def shape_regularity(self) -> ShapeStats:
        return shape_regularity(self)

    def __repr__(self):
        return f"Mesh(nv={self.n_vertices}, nt={self.n_elements}, nf={self.n_facets})"


def _side_tags(boundary) -> dict:
    if boundary is None:
        return {s: DIRICHLET for s in SIDES}
    if isinstance(boundary, str):
        if boundary.strip().upper() in ("D", "N"):
            return {s: tag_code(boundary) for s in SIDES}
        # comma separated list of clamped sides, the rest traction free
        clamped = {x.strip() for x in boundary.split(",") if x.strip()}
        boundary = {s: "D" if s in clamped else "N" for s in SIDES}
        unknown = clamped - set(SIDES)
        if unknown:
            raise ValueError(f"unknown side(s) {sorted(unknown)}; expected {SIDES}")
        return {s: tag_code(t) for s, t in boundary.items()}
    unknown = set(boundary) - set(SIDES)
    if unknown:
        raise ValueError(f"unknown side(s) {sorted(unknown)}; expected {SIDES}")
    missing = set(SIDES) - set(boundary)
    if missing:
        raise ValueError(f"missing boundary tag for side(s) {sorted(missing)}")
    return {s: tag_code(t) for s, t in boundary.items()}


def generate_unit_square(n: int, boundary: Mapping[str, str] | str | None = None,
                         split: tuple | None = None) -> Mesh:
    """Structured mesh of (0,1)^2 with 2n^2 triangles.

    Each grid cell is cut along one diagonal, alternating between neighbouring
    cells.  ``boundary`` maps each of ``'bottom', 'right', 'top', 'left'`` to
    ``'D'`` or ``'N'`` (default: all Dirichlet).  A string is either a single
    tag for all sides or a comma separated list of clamped sides such as
    ``'bottom'`` or ``'left,right'``.  ``split`` is
    ``(axis, position, (id_below, id_above))`` with ``axis`` in ``{'x', 'y'}``;
    without it every element gets material id 0.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    sides = _side_tags(boundary)

    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    vertices = np.stack([i.ravel() / n, j.ravel() / n], axis=1)

    def v(ii, jj):
        return jj * (n + 1) + ii

    ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ci, cj = ci.ravel(), cj.ravel()
    a, b, c, d = v(ci, cj), v(ci + 1, cj), v(ci + 1, cj + 1), v(ci, cj + 1)
    even = (ci + cj) % 2 == 0
    # vertex 0 is the right-angle corner so the diagonal is the refinement edge
    t1 = np.where(even[:, None], np.stack([b, c, a], 1), np.stack([a, b, d], 1))
    t2 = np.where(even[:, None], np.stack([d, a, c], 1), np.stack([c, d, b], 1))
    triangles = np.stack([t1, t2], axis=1).reshape(-1, 3)

    materials = np.zeros(len(triangles), dtype=np.int64)
    if split is not None:
        axis, pos, ids = split
        if axis not in ("x", "y"):
            raise ValueError(f"split axis must be 'x' or 'y', got {axis!r}")
        if abs(pos * n - round(pos * n)) > 1e-12 or not 0 < pos < 1:
            raise ValueError(f"material split at {axis}={pos} is not aligned with the "
                             f"{n}x{n} grid; choose n so that {pos}*n is an integer")
        cent = vertices[triangles].mean(axis=1)[:, 0 if axis == "x" else 1]
        materials = np.where(cent < pos, ids[0], ids[1]).astype(np.int64)

    k = np.arange(n)
    edges, tags = [], []
    for side, (p0, p1) in {
        "bottom": (v(k, 0), v(k + 1, 0)),
        "right": (v(n, k), v(n, k + 1)),
        "top": (v(k, n), v(k + 1, n)),
        "left": (v(0, k), v(0, k + 1)),
    }.items():
        edges.append(np.stack([p0, p1], axis=1))
        tags.append(np.full(n, sides[side]))
    return Mesh(vertices, triangles, materials, np.concatenate(edges), np.concatenate(tags))


def refine(mesh: Mesh, marked, bisec3: bool = False) -> Mesh:
    """Newest-vertex bisection of the marked elements plus conformity closure.

    Every marked element is bisected at least once (with ``bisec3`` all three
    of its edges are split, giving four children); further bisections are
    added until no hanging nodes remain.  Materials and boundary tags are
    inherited by the children.
    """
    if mesh is None or mesh.n_elements == 0:
        raise ValueError("cannot refine an empty mesh")
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray)
                                  else marked, dtype=np.int64))
    if len(marked) == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_elements:
        raise ValueError("marked element id out of range")

    eid = mesh.edge_ids
    flag = np.zeros(mesh.n_facets, dtype=bool)
    flag[eid[marked] if bisec3 else eid[marked, 0]] = True
    while True:
        need = flag[eid].any(axis=1) & ~flag[eid[:, 0]]
        if not need.any():
            break
        flag[eid[need, 0]] = True

    nv = mesh.n_vertices
    fv = mesh.facets.vertices[flag]
    new_vertices = np.concatenate([mesh.vertices, 0.5 * (mesh.vertices[fv[:, 0]]
                                                         + mesh.vertices[fv[:, 1]])])
    # keys must be unique over the refined vertex set, not only the old one
    nkey = len(new_vertices)
    split_keys = _edge_keys(fv[:, 0], fv[:, 1], nkey)
    order = np.argsort(split_keys)
    split_keys = split_keys[order]
    midpoint = (nv + np.arange(len(fv)))[order]

    def lookup(p, q):
        keys = _edge_keys(p, q, nkey)
        pos = np.minimum(np.searchsorted(split_keys, keys), len(split_keys) - 1)
        hit = split_keys[pos] == keys
        return hit, midpoint[pos]

    tri, mat = mesh.triangles, mesh.materials
    for _ in range(3):
        hit, mid = lookup(tri[:, 1], tri[:, 2])
        if not hit.any():
            break
        s = tri[hit]
        m = mid[hit]
        children = np.concatenate([np.stack([m, s[:, 0], s[:, 1]], 1),
                                   np.stack([m, s[:, 2], s[:, 0]], 1)])
        tri = np.concatenate([tri[~hit], children])
        mat = np.concatenate([mat[~hit], mat[hit], mat[hit]])

    be, bt = mesh.boundary_edges, mesh.boundary_tags
    hit, mid = lookup(be[:, 0], be[:, 1])
    be = np.concatenate([be[~hit], np.stack([be[hit, 0], mid[hit]], 1),
                         np.stack([mid[hit], be[hit, 1]], 1)])
    bt = np.concatenate([bt[~hit], bt[hit], bt[hit]])
    return Mesh(new_vertices, tri, mat, be, bt)


def refine_uniform(mesh: Mesh, times: int = 1, bisec3: bool = False) -> Mesh:
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.n_elements), bisec3)
    return mesh


def triangle_angles(points: np.ndarray) -> np.ndarray:
    """Interior angles (radians) of triangles given as (nt, 3, 2) coordinates."""
    points = np.asarray(points, dtype=float).reshape(-1, 3, 2)
    out = np.empty(points.shape[:2])
    for i in range(3):
        u = points[:, (i + 1) % 3] - points[:, i]
        w = points[:, (i + 2) % 3] - points[:, i]
        cross = np.abs(u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0])
        out[:, i] = np.arctan2(cross, np.einsum("ij,ij->i", u, w))
    return out


def shape_regularity(mesh_or_points) -> ShapeStats:
    """Minimum interior angle in degrees and maximum ratio h_K / rho_K.

    ``rho_K`` is the inradius.  Accepts a :class:`Mesh` or raw (nt, 3, 2)
    triangle coordinates.
    """
    if isinstance(mesh_or_points, Mesh):
        pts = mesh_or_points.vertices[mesh_or_points.triangles]
    else:
        pts = np.asarray(mesh_or_points, dtype=float).reshape(-1, 3, 2)
    if len(pts) == 0:
        raise ValueError("empty mesh")
    ang = triangle_angles(pts)
    lens = np.stack([np.linalg.norm(pts[:, (i + 2) % 3] - pts[:, (i + 1) % 3], axis=1)
                     for i in range(3)], 1)
    d1, d2 = pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    rho = 2.0 * area / lens.sum(axis=1)
    return ShapeStats(float(np.degrees(ang.min())), float((lens.max(axis=1) / rho).max()))


def mesh_from_triangles(vertices: Sequence, triangles: Sequence, materials=None,
                        boundary: Mapping | int = DIRICHLET) -> Mesh:
    """Build a mesh tagging every boundary edge with one tag (or per-edge via a mapping)."""
    tri = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    nv = len(vertices)
    a = np.concatenate([tri[:, (i + 1) % 3] for i in range(3)])
    b = np.concatenate([tri[:, (i + 2) % 3] for i in range(3)])
    keys = _edge_keys(a, b, nv)
    uniq, idx, counts = np.unique(keys, return_index=True, return_counts=True)
    bidx = idx[counts == 1]
    edges = np.stack([a[bidx], b[bidx]], axis=1)
    if isinstance(boundary, Mapping):
        tags = np.array([tag_code(boundary[tuple(sorted(map(int, e)))]) for e in edges],
                        dtype=np.int64)
    else:
        tags = np.full(len(edges), tag_code(boundary), dtype=np.int64)
    return Mesh(vertices, tri, materials, edges, tags)
