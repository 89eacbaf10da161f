"""Simplicial meshes with tagged boundary facets.

The mesh is the carrier of the shape: optimization moves its vertices and
nothing else.  Triangles (``dim == 2``) and tetrahedra (``dim == 3``) are
supported.  Cells are stored positively oriented and boundary facets are
stored so that their vertex order yields the outward normal.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.sparse as sp


class BoundaryTag(enum.IntEnum):
    """Boundary parts.  The integer codes are the MSH physical tags."""

    INLET = 1
    OUTLET = 2
    CYL_WALL = 3
    PACKING_JACKET = 4
    PACKING = 5


WALL_TAGS = (BoundaryTag.CYL_WALL, BoundaryTag.PACKING_JACKET, BoundaryTag.PACKING)
PACKING_TAGS = (BoundaryTag.PACKING_JACKET, BoundaryTag.PACKING)


class MeshError(ValueError):
    """Raised for structurally invalid meshes."""


class InvalidDisplacement(Exception):
    """A displacement would invert cells or violate the quality floor.

    Attributes
    ----------
    min_quality : float
        Smallest cell quality of the rejected candidate mesh.
    """

    def __init__(self, min_quality: float, floor: float):
        self.min_quality = float(min_quality)
        self.floor = float(floor)
        super().__init__(
            f"displacement rejected: min quality {self.min_quality:.4g} "
            f"below floor {self.floor:.4g}"
        )


def _signed_volumes(vertices, cells):
    x = vertices[cells]
    edges = x[:, 1:, :] - x[:, :1, :]
    dim = vertices.shape[1]
    return np.linalg.det(edges) / math.factorial(dim)


@dataclass(eq=False)
class Mesh:
    """Simplicial mesh with tagged boundary facets.

    Parameters
    ----------
    vertices : (nv, dim) array
        Vertex coordinates in metres.
    cells : (nc, dim+1) int array
        Cell connectivity.  Reoriented on construction if needed.
    facets : (nf, dim) int array
        Boundary facets.  Must cover the topological boundary exactly.
    facet_tags : (nf,) int array
        One :class:`BoundaryTag` code per facet.
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    facet_cells: np.ndarray = field(init=False, repr=False)
    _vertex_cells: sp.csr_matrix = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        self.facets = np.ascontiguousarray(self.facets, dtype=np.int64).reshape(-1, self.dim)
        self.facet_tags = np.ascontiguousarray(self.facet_tags, dtype=np.int64)
        if self.dim not in (2, 3):
            raise MeshError(f"unsupported dimension {self.dim}")
        if self.cells.ndim != 2 or self.cells.shape[1] != self.dim + 1:
            raise MeshError("cells must have dim+1 vertices")
        if len(self.facet_tags) != len(self.facets):
            raise MeshError("one tag per boundary facet required")
        if len(self.cells) and (self.cells.min() < 0 or self.cells.max() >= len(self.vertices)):
            raise MeshError("cell references a missing vertex")
        valid = {int(t) for t in BoundaryTag}
        bad = [i for i, t in enumerate(self.facet_tags) if int(t) not in valid]
        if bad:
            raise MeshError(f"facet {bad[0]} carries unknown tag {self.facet_tags[bad[0]]}")
        self._orient_cells()
        self._match_boundary()

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def _orient_cells(self):
        vol = _signed_volumes(self.vertices, self.cells)
        flip = vol < 0
        if flip.any():
            self.cells[flip, 0], self.cells[flip, 1] = (
                self.cells[flip, 1].copy(), self.cells[flip, 0].copy())

    def _match_boundary(self):
        # every facet of every cell, keyed by its sorted vertex tuple
        d = self.dim
        local = list(combinations(range(d + 1), d))
        all_facets = np.concatenate([self.cells[:, list(f)] for f in local])
        owner = np.tile(np.arange(self.num_cells), len(local))
        keys = np.sort(all_facets, axis=1)
        uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                          return_counts=True)
        inverse = inverse.ravel()
        if counts.max(initial=1) > 2:
            raise MeshError("non-manifold mesh: facet shared by more than two cells")
        boundary_ids = np.flatnonzero(counts == 1)
        lookup = {tuple(uniq[i]): i for i in boundary_ids}
        first = np.full(len(uniq), -1, dtype=np.int64)
        first[inverse[::-1]] = owner[::-1]

        facet_cells = np.empty(len(self.facets), dtype=np.int64)
        seen = set()
        for k, f in enumerate(np.sort(self.facets, axis=1)):
            key = tuple(f)
            i = lookup.get(key)
            if i is None:
                raise MeshError(f"tagged facet {k} {tuple(self.facets[k])} is not on the boundary")
            if key in seen:
                raise MeshError(f"facet {k} {tuple(self.facets[k])} tagged twice")
            seen.add(key)
            facet_cells[k] = first[i]
        if len(seen) != len(boundary_ids):
            missing = [tuple(uniq[i]) for i in boundary_ids if tuple(uniq[i]) not in seen]
            raise MeshError(f"boundary facet {missing[0]} has no tag")
        self.facet_cells = facet_cells
        self._orient_facets()

    def _orient_facets(self):
        if not len(self.facets):
            return
        n = _area_vectors(self.vertices, self.facets)
        cell = self.cells[self.facet_cells]
        centroid = self.vertices[cell].mean(axis=1)
        fc = self.vertices[self.facets].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, fc - centroid) < 0
        if flip.any():
            self.facets[flip, 0], self.facets[flip, 1] = (
                self.facets[flip, 1].copy(), self.facets[flip, 0].copy())

    @property
    def vertex_cells(self) -> sp.csr_matrix:
        """Vertex-to-cell incidence (nv x nc, boolean CSR)."""
        if self._vertex_cells is None:
            nc, k = self.cells.shape
            self._vertex_cells = sp.csr_matrix(
                (np.ones(nc * k, dtype=bool),
                 (self.cells.ravel(), np.repeat(np.arange(nc), k))),
                shape=(self.num_vertices, nc))
        return self._vertex_cells

    def tag_vertices(self, tags) -> np.ndarray:
        """Sorted unique vertex indices lying on facets with any of ``tags``."""
        tags = [int(t) for t in np.atleast_1d(tags)]
        mask = np.isin(self.facet_tags, tags)
        return np.unique(self.facets[mask])

    def tag_facets(self, tags) -> np.ndarray:
        tags = [int(t) for t in np.atleast_1d(tags)]
        return np.flatnonzero(np.isin(self.facet_tags, tags))

    def has_tag(self, tag) -> bool:
        return bool(np.any(self.facet_tags == int(tag)))

    def with_vertices(self, vertices) -> "Mesh":
        """Copy of the mesh with new coordinates and the same topology.

        No reorientation happens, so inverted cells stay inverted and show
        up as negative volumes.
        """
        new = object.__new__(Mesh)
        new.vertices = np.ascontiguousarray(vertices, dtype=float)
        new.cells = self.cells
        new.facets = self.facets
        new.facet_tags = self.facet_tags
        new.facet_cells = self.facet_cells
        new._vertex_cells = self._vertex_cells
        return new

    def copy(self) -> "Mesh":
        return self.with_vertices(self.vertices.copy())


def _area_vectors(vertices, facets):
    x = vertices[facets]
    if x.shape[2] == 2:
        t = x[:, 1] - x[:, 0]
        return np.stack([t[:, 1], -t[:, 0]], axis=1)
    return 0.5 * np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])


def cell_volumes(mesh: Mesh) -> np.ndarray:
    """Signed volumes of all cells."""
    return _signed_volumes(mesh.vertices, mesh.cells)


def cell_volume(mesh: Mesh, cell: int) -> float:
    """Signed volume of one cell (area in 2D)."""
    if not 0 <= cell < mesh.num_cells:
        raise IndexError(f"cell {cell} out of range")
    return float(_signed_volumes(mesh.vertices, mesh.cells[cell:cell + 1])[0])


def facet_normals(mesh: Mesh, facets=None):
    """Unit outward normals and measures of boundary facets."""
    idx = slice(None) if facets is None else facets
    a = _area_vectors(mesh.vertices, mesh.facets[idx])
    measure = np.linalg.norm(a, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = a / measure[:, None]
    return n, measure


def facet_normal_area(mesh: Mesh, facet: int):
    """Unit outward normal and measure of a boundary facet.

    ``facet`` indexes ``mesh.facets``, which only holds boundary facets, so
    anything else is rejected.
    """
    if not 0 <= facet < len(mesh.facets):
        raise IndexError(f"{facet} is not a boundary facet index")
    n, m = facet_normals(mesh, [facet])
    return n[0], float(m[0])


def cell_diameters(mesh: Mesh) -> np.ndarray:
    x = mesh.vertices[mesh.cells]
    k = mesh.dim + 1
    pairs = list(combinations(range(k), 2))
    lengths = np.stack([np.linalg.norm(x[:, i] - x[:, j], axis=1) for i, j in pairs], axis=1)
    return lengths.max(axis=1)


def _qualities(vertices, cells):
    x = vertices[cells]
    dim = vertices.shape[1]
    vol = _signed_volumes(vertices, cells)
    if dim == 2:
        a = np.linalg.norm(x[:, 1] - x[:, 2], axis=1)
        b = np.linalg.norm(x[:, 0] - x[:, 2], axis=1)
        c = np.linalg.norm(x[:, 0] - x[:, 1], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = 2.0 * vol / (a + b + c)
            R = a * b * c / (4.0 * vol)
    else:
        faces = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
        area = sum(
            0.5 * np.linalg.norm(np.cross(x[:, j] - x[:, i], x[:, k] - x[:, i]), axis=1)
            for i, j, k in faces)
        # circumradius: R = sqrt((aA+bB+cC)(aA+bB-cC)(aA-bB+cC)(-aA+bB+cC)) / (24 V)
        def el(i, j):
            return np.linalg.norm(x[:, i] - x[:, j], axis=1)
        p = el(0, 1) * el(2, 3)
        q = el(0, 2) * el(1, 3)
        s = el(0, 3) * el(1, 2)
        prod = (p + q + s) * (p + q - s) * (p - q + s) * (-p + q + s)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = 3.0 * vol / area
            R = np.sqrt(np.maximum(prod, 0.0)) / (24.0 * vol)
    with np.errstate(invalid="ignore"):
        q = dim * r / R
    q = np.where((vol > 0) & np.isfinite(q), q, 0.0)
    return np.clip(q, 0.0, 1.0)


def cell_qualities(mesh: Mesh) -> np.ndarray:
    """Radius-ratio quality ``dim * inradius / circumradius`` for all cells."""
    return _qualities(mesh.vertices, mesh.cells)


def cell_quality(mesh: Mesh, cell: int) -> float:
    if not 0 <= cell < mesh.num_cells:
        raise IndexError(f"cell {cell} out of range")
    return float(_qualities(mesh.vertices, mesh.cells[cell:cell + 1])[0])


def min_quality(mesh: Mesh) -> float:
    if mesh.num_cells == 0:
        raise MeshError("empty mesh")
    return float(cell_qualities(mesh).min())


def apply_displacement(mesh: Mesh, displacement, quality_floor: float = 0.1) -> Mesh:
    """Move every vertex by ``displacement`` if the result is a valid mesh.

    Returns a new mesh; the input is never modified.

    Raises
    ------
    ValueError
        If the displacement shape does not match the vertex array or has
        non-finite entries.
    InvalidDisplacement
        If any cell would be inverted or fall below ``quality_floor``.
    """
    d = np.asarray(displacement, dtype=float)
    if d.shape != mesh.vertices.shape:
        raise ValueError(f"displacement shape {d.shape} != vertex shape {mesh.vertices.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("displacement has non-finite entries")
    if not 0.0 <= quality_floor < 1.0:
        raise ValueError("quality_floor must lie in [0, 1)")
    x = mesh.vertices + d
    vol = _signed_volumes(x, mesh.cells)
    q = _qualities(x, mesh.cells)
    qmin = float(q.min()) if len(q) else 1.0
    if np.any(vol <= 0) or qmin < quality_floor:
        raise InvalidDisplacement(qmin if np.all(vol > 0) else 0.0, quality_floor)
    return mesh.with_vertices(x)


def rectangle_mesh(nx: int, ny: int, length: float = 1.0, height: float = 1.0,
                   diagonal: str = "right", origin=(0.0, 0.0), tags=None) -> Mesh:
    """Structured triangulation of ``[0, length] x [0, height]``.

    ``diagonal`` is ``"right"`` (two triangles per quad) or ``"crossed"``
    (four triangles around a midpoint).  ``tags`` maps the sides
    ``left/right/bottom/top`` to boundary tags; the default is a channel
    with inlet on the left, outlet on the right and cylinder walls.
    """
    tags = {"left": BoundaryTag.INLET, "right": BoundaryTag.OUTLET,
            "bottom": BoundaryTag.CYL_WALL, "top": BoundaryTag.CYL_WALL, **(tags or {})}
    xs = origin[0] + np.linspace(0.0, length, nx + 1)
    ys = origin[1] + np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = [np.column_stack([X.ravel(), Y.ravel()])]
    vid = lambda i, j: j * (nx + 1) + i  # noqa: E731
    cells = []
    mid0 = (nx + 1) * (ny + 1)
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if diagonal == "crossed":
                m = mid0 + j * nx + i
                cells += [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]
            else:
                cells += [(a, b, c), (a, c, d)]
    if diagonal == "crossed":
        cx = 0.5 * (xs[:-1] + xs[1:])
        cy = 0.5 * (ys[:-1] + ys[1:])
        CX, CY = np.meshgrid(cx, cy, indexing="xy")
        verts.append(np.column_stack([CX.ravel(), CY.ravel()]))
    facets, ftags = [], []
    for i in range(nx):
        facets += [(vid(i, 0), vid(i + 1, 0)), (vid(i, ny), vid(i + 1, ny))]
        ftags += [tags["bottom"], tags["top"]]
    for j in range(ny):
        facets += [(vid(0, j), vid(0, j + 1)), (vid(nx, j), vid(nx, j + 1))]
        ftags += [tags["left"], tags["right"]]
    return Mesh(np.concatenate(verts), np.array(cells), np.array(facets), np.array(ftags))


def box_mesh(nx: int, ny: int, nz: int, size=(1.0, 1.0, 1.0), tags=None) -> Mesh:
    """Structured tetrahedral mesh of a box (six tets per hexahedron).

    Sides are ``x0, x1, y0, y1, z0, z1``; default tags make ``x`` the flow
    direction with cylinder walls elsewhere.
    """
    tags = {"x0": BoundaryTag.INLET, "x1": BoundaryTag.OUTLET, "y0": BoundaryTag.CYL_WALL,
            "y1": BoundaryTag.CYL_WALL, "z0": BoundaryTag.CYL_WALL, "z1": BoundaryTag.CYL_WALL,
            **(tags or {})}
    n = (nx, ny, nz)
    axes = [np.linspace(0.0, s, k + 1) for s, k in zip(size, n)]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    # Kuhn subdivision: tets along the main diagonal, conforming across cubes
    paths = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    cells = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for path in paths:
                    c = [i, j, k]
                    tet = [vid(*c)]
                    for ax in path:
                        c[ax] += 1
                        tet.append(vid(*c))
                    cells.append(tet)
    cells = np.array(cells)
    local = list(combinations(range(4), 3))
    faces = np.sort(np.concatenate([cells[:, list(f)] for f in local]), axis=1)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    xb = G[bnd]
    ftags = np.empty(len(bnd), dtype=np.int64)
    eps = 1e-12
    for ax, name in enumerate("xyz"):
        lo = np.all(np.abs(xb[:, :, ax]) < eps, axis=1)
        hi = np.all(np.abs(xb[:, :, ax] - size[ax]) < eps, axis=1)
        ftags[lo] = tags[name + "0"]
        ftags[hi] = tags[name + "1"]
    return Mesh(G, cells, bnd, ftags)
