"""Built-in desk geometry: a 2D channel with circular obstacles.

The obstacles stand in for packing elements.  Triangulation is delegated
to Shewchuk's Triangle (quality-constrained Delaunay).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import triangle

from .mesh import BoundaryTag, Mesh

_MARK = {"inlet": 1, "outlet": 2, "bottom": 3, "top": 4, "center": 5, "obstacle": 6}


@dataclass
class ChannelCase:
    """Parameters of the channel-with-obstacles case (lengths in metres).

    ``centers`` and ``radii`` give the obstacles.  ``h`` is the target edge
    length away from obstacles; obstacle circles get ``segments`` edges.
    ``walls`` is the tag of the top and bottom walls.  With ``mirror`` the
    lower half is meshed and reflected, giving an exactly symmetric mesh
    (all obstacles must then sit on the centreline).
    """

    length: float = 8e-3
    height: float = 2e-3
    centers: list = field(default_factory=lambda: default_layout(4)[0])
    radii: list = field(default_factory=lambda: default_layout(4)[1])
    h: float = 1.0e-4
    segments: int = 32
    walls: int = BoundaryTag.CYL_WALL
    mirror: bool = False
    min_angle: float = 30.0


def default_layout(n: int, length: float = 8e-3, height: float = 2e-3, radius: float = 2.5e-4):
    """Staggered obstacle layout used by the desk case."""
    if n == 0:
        return [], []
    xs = np.linspace(0.25 * length, 0.7 * length, n) if n > 1 else [0.4 * length]
    ys = [height * (0.5 + (0.15 if i % 2 else -0.15)) for i in range(n)] if n > 1 else [0.5 * height]
    return [(float(x), float(y)) for x, y in zip(xs, ys)], [radius] * n


def _check(case: ChannelCase):
    if len(case.centers) != len(case.radii):
        raise ValueError("one radius per obstacle required")
    if case.segments < 8:
        raise ValueError(f"{case.segments} segments per obstacle is too coarse (minimum 8)")
    for k, ((x, y), r) in enumerate(zip(case.centers, case.radii)):
        if r <= 0:
            raise ValueError(f"obstacle {k}: radius must be positive")
        arc = 2 * np.pi * r / case.segments
        if arc > 2 * case.h:
            raise ValueError(f"obstacle {k}: resolution too coarse (edge {arc:.3g} > 2h)")
        if not (r + case.h <= x <= case.length - r - case.h and r + case.h <= y <= case.height - r - case.h):
            raise ValueError(f"obstacle {k} is not inside the channel")
        if case.mirror and y != case.height / 2:
            raise ValueError("mirrored cases need obstacles on the centreline")
        for j in range(k):
            (x2, y2), r2 = case.centers[j], case.radii[j]
            if np.hypot(x - x2, y - y2) < r + r2 + case.h:
                raise ValueError(f"obstacles {j} and {k} overlap")


def _circle(cx, cy, r, n, start=0.0, stop=2 * np.pi, closed=True):
    count = n if closed else int(round(n * abs(stop - start) / (2 * np.pi))) + 1
    ang = start + (stop - start) * np.arange(count) / (n if closed else count - 1)
    return np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)])


def _full_pslg(case):
    L, H = case.length, case.height
    verts = [(0, 0), (L, 0), (L, H), (0, H)]
    segs = [(0, 1), (1, 2), (2, 3), (3, 0)]
    marks = [_MARK["bottom"], _MARK["outlet"], _MARK["top"], _MARK["inlet"]]
    holes = []
    for (cx, cy), r in zip(case.centers, case.radii):
        pts = _circle(cx, cy, r, case.segments)
        i0 = len(verts)
        verts += [tuple(p) for p in pts]
        n = len(pts)
        segs += [(i0 + i, i0 + (i + 1) % n) for i in range(n)]
        marks += [_MARK["obstacle"]] * n
        holes.append((cx, cy))
    return verts, segs, marks, holes


def _half_pslg(case):
    """Lower half: bottom, outlet half, centreline with half-circle dips, inlet half."""
    L, Hh = case.length, case.height / 2
    order = np.argsort([c[0] for c in case.centers])[::-1]
    path = [(0.0, 0.0), (L, 0.0), (L, Hh)]
    marks = [_MARK["bottom"], _MARK["outlet"]]
    for k in order:
        (cx, _), r = case.centers[k], case.radii[k]
        arc = _circle(cx, Hh, r, case.segments, 0.0, -np.pi, closed=False)
        path += [tuple(p) for p in arc]
        marks += [_MARK["center"]] + [_MARK["obstacle"]] * (len(arc) - 1)
    path.append((0.0, Hh))
    marks += [_MARK["center"], _MARK["inlet"]]
    # clamp the arc endpoints onto the centreline exactly
    path = [(x, Hh) if abs(y - Hh) < 1e-12 * case.height else (x, y) for x, y in path]
    n = len(path)
    segs = [(i, (i + 1) % n) for i in range(n)]
    return path, segs, marks, []


def _triangulate(verts, segs, marks, holes, case):
    data = dict(vertices=np.array(verts, dtype=float), segments=np.array(segs),
                segment_markers=np.array(marks))
    if holes:
        data["holes"] = np.array(holes)
    area = np.sqrt(3) / 4 * case.h ** 2
    out = triangle.triangulate(data, f"pq{case.min_angle:g}a{area:.20f}")
    return out["vertices"], out["triangles"], out["segments"], out["segment_markers"].ravel()


def _tag_of(mark, case):
    if mark == _MARK["inlet"]:
        return BoundaryTag.INLET
    if mark == _MARK["outlet"]:
        return BoundaryTag.OUTLET
    if mark in (_MARK["top"], _MARK["bottom"]):
        return BoundaryTag(case.walls)
    if mark == _MARK["obstacle"]:
        return BoundaryTag.PACKING
    return None


def make_case(kind: str = "channel-obstacles", **params) -> Mesh:
    """Generate a tagged mesh; ``params`` are :class:`ChannelCase` fields."""
    if kind != "channel-obstacles":
        raise ValueError(f"unknown case kind {kind!r}")
    case = ChannelCase(**params)
    _check(case)
    if not case.mirror:
        V, T, S, M = _triangulate(*_full_pslg(case), case)
        tags = [_tag_of(m, case) for m in M]
        return Mesh(V, T, S, np.array(tags, dtype=np.int64))

    V, T, S, M = _triangulate(*_half_pslg(case), case)
    Hh = case.height / 2
    on_axis = np.abs(V[:, 1] - Hh) <= 1e-12 * case.height
    V[on_axis, 1] = Hh
    nv = len(V)
    image = np.where(on_axis, np.arange(nv), nv + np.cumsum(~on_axis) - 1)
    mirrored = V[~on_axis].copy()
    mirrored[:, 1] = 2 * Hh - mirrored[:, 1]
    verts = np.vstack([V, mirrored])
    cells = np.vstack([T, image[T][:, [1, 0, 2]]])
    keep = np.array([_tag_of(m, case) is not None for m in M])
    S, M = S[keep], M[keep]
    tags = np.array([_tag_of(m, case) for m in M], dtype=np.int64)
    facets = np.vstack([S, image[S][:, ::-1]])
    return Mesh(verts, cells, facets, np.concatenate([tags, tags]))


def desk_case(obstacles: int = 4, h: float = 1.0e-4, segments: int = 32, **kw) -> Mesh:
    """The 1x4 desk channel (2 mm x 8 mm) with staggered obstacles."""
    centers, radii = default_layout(obstacles)
    return make_case(centers=centers, radii=radii, h=h, segments=segments, **kw)


def symmetric_case(obstacles: int = 2, h: float = 1.5e-4, segments: int = 24, **kw) -> Mesh:
    """Mirror-symmetric channel with obstacles on the centreline."""
    L, H = 8e-3, 2e-3
    xs = np.linspace(0.3 * L, 0.65 * L, obstacles) if obstacles > 1 else [0.4 * L]
    return make_case(centers=[(float(x), H / 2) for x in xs], radii=[2.5e-4] * obstacles,
                     h=h, segments=segments, mirror=True, **kw)

