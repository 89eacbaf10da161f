"""File formats: MSH 2.2 ASCII meshes, legacy VTK output, history CSV and
metrics JSON.  Every writer goes through a temp file and an atomic rename,
so an interrupted run never leaves a truncated file behind."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import astuple
from pathlib import Path

import numpy as np

from .mesh import BoundaryTag, Mesh, MeshError

HISTORY_HEADER = ("iter", "J", "beta", "c_out", "dp", "a_geo", "min_quality", "step", "grad_norm")

# gmsh element type -> (topological dimension, vertex count)
_GMSH_TYPES = {1: (1, 2), 2: (2, 3), 4: (3, 4), 15: (0, 1)}
_VTK_CELL = {2: 5, 3: 10}


class MshFormatError(MeshError):
    pass


@contextmanager
def atomic_write(path, mode="w"):
    """Open a temp file next to ``path``; rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _fmt(x) -> str:
    return f"{x:.17g}"


# ------------------------------------------------------------------ MSH 2.2

def _sections(text):
    """Map section name -> list of body lines."""
    out, name, body = {}, None, []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("$"):
            if name is None:
                name, body = line[1:], []
            elif line == f"$End{name}":
                out[name] = body
                name = None
            else:
                raise MshFormatError(f"section ${name} not closed before {line}")
        elif name is not None:
            body.append(line)
    if name is not None:
        raise MshFormatError(f"section ${name} not closed")
    return out


def read_msh(path) -> Mesh:
    """Read the MSH 2.2 ASCII subset (lines, triangles, tetrahedra).

    Cells are the elements of the highest dimension present; elements one
    dimension lower are boundary facets and their physical tag (the first
    integer tag) must be a :class:`BoundaryTag` code.  Points (type 15)
    are ignored, quadrilaterals and other types are rejected.
    """
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError:
        raise MshFormatError(f"{path}: not an ASCII MSH file") from None
    sec = _sections(text)
    for req in ("MeshFormat", "Nodes", "Elements"):
        if req not in sec:
            raise MshFormatError(f"{path}: missing ${req} section")
    fmt = sec["MeshFormat"][0].split()
    if len(fmt) < 3 or fmt[0] not in ("2.2", "2.2.0") or fmt[1] != "0":
        raise MshFormatError(f"{path}: unsupported MSH format {' '.join(fmt)!r} "
                             "(only version 2.2 ASCII is supported)")

    nodes = sec["Nodes"]
    n = int(nodes[0])
    if len(nodes) != n + 1:
        raise MshFormatError(f"{path}: expected {n} nodes, found {len(nodes) - 1}")
    ids = np.empty(n, dtype=np.int64)
    xyz = np.empty((n, 3))
    for i, line in enumerate(nodes[1:]):
        parts = line.split()
        ids[i] = int(parts[0])
        xyz[i] = [float(v) for v in parts[1:4]]
    if len(np.unique(ids)) != n:
        raise MshFormatError(f"{path}: duplicate node ids")
    remap = {int(k): i for i, k in enumerate(ids)}

    elems = sec["Elements"]
    m = int(elems[0])
    if len(elems) != m + 1:
        raise MshFormatError(f"{path}: expected {m} elements, found {len(elems) - 1}")
    by_dim: dict[int, list] = {}
    for line in elems[1:]:
        parts = [int(v) for v in line.split()]
        eid, etype, ntags = parts[0], parts[1], parts[2]
        if etype not in _GMSH_TYPES:
            raise MshFormatError(f"{path}: element {eid} has unsupported type {etype}")
        dim, nverts = _GMSH_TYPES[etype]
        if dim == 0:
            continue
        tag = parts[3] if ntags > 0 else 0
        verts = parts[3 + ntags:]
        if len(verts) != nverts:
            raise MshFormatError(f"{path}: element {eid} has {len(verts)} nodes, expected {nverts}")
        try:
            local = [remap[v] for v in verts]
        except KeyError as exc:
            raise MshFormatError(f"{path}: element {eid} references unknown node {exc.args[0]}") from None
        by_dim.setdefault(dim, []).append((eid, tag, local))

    if not by_dim:
        raise MshFormatError(f"{path}: no cells")
    dim = max(by_dim)
    if dim < 2:
        raise MshFormatError(f"{path}: no triangles or tetrahedra")
    if dim == 2 and np.any(xyz[:, 2] != 0.0):
        raise MshFormatError(f"{path}: 2D mesh with non-zero z coordinates")
    cells = np.array([e[2] for e in by_dim[dim]], dtype=np.int64)
    facet_elems = by_dim.get(dim - 1, [])
    valid = {int(t) for t in BoundaryTag}
    for eid, tag, _ in facet_elems:
        if tag not in valid:
            raise MshFormatError(f"{path}: boundary element {eid} has unrecognized tag {tag}")
    facets = np.array([e[2] for e in facet_elems], dtype=np.int64).reshape(-1, dim)
    tags = np.array([e[1] for e in facet_elems], dtype=np.int64)

    # drop nodes that belong to no cell (e.g. geometry points)
    used = np.unique(cells)
    if len(used) != n:
        new = -np.ones(n, dtype=np.int64)
        new[used] = np.arange(len(used))
        if np.any(new[facets] < 0):
            raise MshFormatError(f"{path}: boundary element uses a node outside all cells")
        xyz, cells, facets = xyz[used], new[cells], new[facets]
    return Mesh(xyz[:, :dim].copy(), cells, facets, tags)


def write_msh(path, mesh: Mesh) -> None:
    """Write ``mesh`` as MSH 2.2 ASCII; boundary facets carry their tag as
    both physical and elementary tag."""
    ftype, ctype = {2: (1, 2), 3: (2, 4)}[mesh.dim]
    buf = io.StringIO()
    buf.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n")
    buf.write(f"{mesh.num_vertices}\n")
    pad = np.zeros((mesh.num_vertices, 3))
    pad[:, :mesh.dim] = mesh.vertices
    for i, p in enumerate(pad, 1):
        buf.write(f"{i} {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")
    buf.write("$EndNodes\n$Elements\n")
    buf.write(f"{len(mesh.facets) + mesh.num_cells}\n")
    k = 1
    for f, t in zip(mesh.facets, mesh.facet_tags):
        buf.write(f"{k} {ftype} 2 {t} {t} " + " ".join(str(v + 1) for v in f) + "\n")
        k += 1
    for c in mesh.cells:
        buf.write(f"{k} {ctype} 2 0 0 " + " ".join(str(v + 1) for v in c) + "\n")
        k += 1
    buf.write("$EndElements\n")
    with atomic_write(path) as fh:
        fh.write(buf.getvalue())


# ------------------------------------------------------------------ VTK

def write_vtk(path, mesh: Mesh, u=None, p=None, c=None, **scalars) -> None:
    """Legacy ASCII VTK unstructured grid with point data.

    ``u`` (nv, dim) is written as a 3-vector field, ``p``, ``c`` and any
    extra keyword arrays (nv,) as scalars.  ``None`` fields are skipped.
    """
    nv = mesh.num_vertices
    vectors, fields = {}, {}
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape != (nv, mesh.dim):
            raise ValueError(f"field u has shape {u.shape}, expected {(nv, mesh.dim)}")
        vectors["u"] = u
    for name, arr in {"p": p, "c": c, **scalars}.items():
        if arr is None:
            continue
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (nv,):
            raise ValueError(f"field {name} has shape {arr.shape}, expected ({nv},)")
        fields[name] = arr

    buf = io.StringIO()
    buf.write("# vtk DataFile Version 3.0\npackopt\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    buf.write(f"POINTS {nv} double\n")
    pad = np.zeros((nv, 3))
    pad[:, :mesh.dim] = mesh.vertices
    for x in pad:
        buf.write(" ".join(_fmt(v) for v in x) + "\n")
    k = mesh.dim + 1
    buf.write(f"CELLS {mesh.num_cells} {mesh.num_cells * (k + 1)}\n")
    for cell in mesh.cells:
        buf.write(f"{k} " + " ".join(map(str, cell)) + "\n")
    buf.write(f"CELL_TYPES {mesh.num_cells}\n")
    buf.write((f"{_VTK_CELL[mesh.dim]}\n") * mesh.num_cells)
    if vectors or fields:
        buf.write(f"POINT_DATA {nv}\n")
    for name, arr in vectors.items():
        buf.write(f"VECTORS {name} double\n")
        full = np.zeros((nv, 3))
        full[:, :arr.shape[1]] = arr
        for x in full:
            buf.write(" ".join(_fmt(v) for v in x) + "\n")
    for name, arr in fields.items():
        buf.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        buf.write("\n".join(_fmt(v) for v in arr) + "\n")
    with atomic_write(path) as fh:
        fh.write(buf.getvalue())


# ------------------------------------------------------------------ history / metrics

def write_history(path, history) -> None:
    """CSV with one row per :class:`OptimizationRecord`, 17 significant digits."""
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for rec in history:
            row = astuple(rec) if not isinstance(rec, (tuple, list)) else rec
            w.writerow([str(int(row[0]))] + [_fmt(float(v)) for v in row[1:]])


def read_history(path) -> list:
    from .shapeopt import OptimizationRecord

    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if tuple(header or ()) != HISTORY_HEADER:
            raise ValueError(f"{path}: unexpected history header {header}")
        return [OptimizationRecord(int(row[0]), *map(float, row[1:])) for row in r if row]


def write_metrics(path, metrics) -> None:
    data = metrics.as_dict() if hasattr(metrics, "as_dict") else dict(metrics)
    with atomic_write(path) as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_metrics(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
