"""Scalar diagnostics of a solved case: flow rate, packing area, outlet
concentration, mass transfer coefficient and pressure drop."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import fem
from .mesh import PACKING_TAGS, BoundaryTag, Mesh, MeshError, facet_normals


class MetricError(ValueError):
    """A metric is undefined for the given state (empty tag, zero flux...)."""


@dataclass
class CaseMetrics:
    beta: float
    c_out: float
    vdot: float
    a_geo: float
    dp: float
    J: float

    def as_dict(self) -> dict:
        return asdict(self)


def _facet_values(mesh, fids, values):
    """Facet quadrature-point values (nf, nq, ...) and measures (nf,)."""
    lam, w = fem.facet_quadrature(mesh.dim)
    vals = np.asarray(values)[mesh.facets[fids]]
    return np.einsum("qa,fa...->fq...", lam, vals), w


def _boundary_integral(mesh, tag, integrand):
    fids = mesh.tag_facets(tag)
    if not len(fids):
        raise MetricError(f"no facets tagged {BoundaryTag(tag).name}")
    n, meas = facet_normals(mesh, fids)
    return integrand(fids, n, meas)


def _flux(mesh, tag, u, weight=None):
    def integrand(fids, n, meas):
        uq, w = _facet_values(mesh, fids, u)
        un = np.einsum("fqi,fi->fq", uq, n)
        if weight is not None:
            cq, _ = _facet_values(mesh, fids, weight)
            un = un * cq
        return float(np.sum(meas * (un @ w)))
    return _boundary_integral(mesh, tag, integrand)


def volume_flow_rate(mesh: Mesh, u) -> float:
    """``|int_inlet u . n|`` (m^3/s, or m^2/s in 2D)."""
    return abs(_flux(mesh, BoundaryTag.INLET, u))


def geometric_area(mesh: Mesh) -> float:
    """Total measure of packing and packing-jacket facets."""
    fids = mesh.tag_facets(PACKING_TAGS)
    area = float(facet_normals(mesh, fids)[1].sum()) if len(fids) else 0.0
    if area <= 0.0:
        raise MetricError("geometric area is zero: mesh has no packing facets")
    return area


def outlet_concentration(mesh: Mesh, u, c) -> float:
    """Flow-weighted mean concentration over the outlet."""
    q = _flux(mesh, BoundaryTag.OUTLET, u)
    if q == 0.0:
        raise MetricError("zero net outlet flux")
    return _flux(mesh, BoundaryTag.OUTLET, u, weight=c) / q


def beta(vdot: float, a_geo: float, c_in: float, c_pack: float, c_out: float) -> float:
    """Logarithmic mass transfer coefficient (natural logarithm)."""
    num, den = c_pack - c_in, c_pack - c_out
    if den == 0.0:
        raise MetricError("c_out equals c_pack: infinite mass transfer coefficient")
    ratio = num / den
    if ratio < 1.0:
        raise MetricError(
            f"c_out = {c_out:.6g} lies outside ({c_pack:g}, {c_in:g}]: unphysical state")
    return vdot / a_geo * math.log(ratio)


def _mean_over(mesh, tag, p):
    def integrand(fids, n, meas):
        pq, w = _facet_values(mesh, fids, p)
        return float(np.sum(meas * (pq @ w)) / meas.sum())
    return _boundary_integral(mesh, tag, integrand)


def pressure_drop(mesh: Mesh, state) -> float:
    """Area-averaged pressure on the inlet minus that on the outlet."""
    return _mean_over(mesh, BoundaryTag.INLET, state.p) - _mean_over(mesh, BoundaryTag.OUTLET, state.p)


def compute_metrics(mesh: Mesh, flow, c, c_in: float, c_pack: float) -> CaseMetrics:
    values = getattr(c, "values", c)
    vdot = volume_flow_rate(mesh, flow.u)
    a_geo = geometric_area(mesh)
    c_out = outlet_concentration(mesh, flow.u, values)
    b = beta(vdot, a_geo, c_in, c_pack, c_out)
    return CaseMetrics(beta=b, c_out=c_out, vdot=vdot, a_geo=a_geo,
                       dp=pressure_drop(mesh, flow), J=b)


@dataclass
class CaseSolution:
    mesh: Mesh
    flow: object
    concentration: object
    metrics: CaseMetrics


def solve_case(mesh: Mesh, cfg, flow_guess=None) -> CaseSolution:
    """Flow solve, transport solve and metrics for one mesh."""
    from .flow import solve_flow
    from .transport import solve_transport

    if not len(mesh.tag_facets(PACKING_TAGS)):
        # fail before spending solver time on an undefined objective
        geometric_area(mesh)
    flow = solve_flow(mesh, cfg.fluid, cfg.inlet, cfg.flow_solver, initial=flow_guess)
    conc = solve_transport(mesh, flow.u, cfg.transport, cfg.transport_solver)
    m = compute_metrics(mesh, flow, conc, cfg.transport.c_in, cfg.transport.c_pack)
    return CaseSolution(mesh, flow, conc, m)


def evaluate_case(mesh: Mesh, cfg) -> CaseMetrics:
    """Solve the case on ``mesh`` with config ``cfg`` and return its metrics."""
    if mesh.num_cells == 0:
        raise MeshError("empty mesh")
    return solve_case(mesh, cfg).metrics
