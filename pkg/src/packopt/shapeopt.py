"""Adjoint shape gradients and the gradient-ascent loop on vertex coordinates.

The objective is the mass transfer coefficient ``J = beta``.  Its total
derivative with respect to every vertex coordinate is obtained with a
discrete adjoint that exploits the one-way coupling flow -> transport:

1. adjoint transport ``K^T z = -dJ/dc``,
2. adjoint flow ``A^T lam = -dJ/du - (d(K c)/du)^T z``,
3. ``dJ/dX = dJ/dX|_explicit + z . d(K c)/dX + lam . dR/dX``.

Element-level derivatives (including those of the stabilization
parameters) come from automatic differentiation of the element kernels.

Boundary parts play one of three roles: ``fixed`` (vertices never move),
``sliding`` (motion tangential to the boundary only) and ``free``.  The
ascent direction is the elastic extension of a boundary displacement, so
interior vertices only ever move to follow the boundary.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import jax
import jax.numpy as jnp
import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import FunctionSpace, SolverError, elasticity_matrix, solve_linear
from .flow import FlowProblem, solve_flow
from .mesh import (BoundaryTag, InvalidDisplacement, Mesh, MeshError, apply_displacement,
                   cell_diameters, facet_normals, min_quality)
from .metrics import CaseMetrics, MetricError, compute_metrics
from .transport import TransportProblem, solve_transport

log = logging.getLogger(__name__)

ROLES = ("fixed", "sliding", "free")


@dataclass
class BoundaryRoles:
    """How each boundary part may move.  ``jacket_normal`` is ``auto`` (from
    the initial facet normals) or a constant vector like ``0,1``."""

    inlet: str = "fixed"
    outlet: str = "fixed"
    cyl_wall: str = "fixed"
    packing_jacket: str = "sliding"
    packing: str = "free"
    jacket_normal: str = "auto"

    def __post_init__(self):
        for name in ("inlet", "outlet", "cyl_wall", "packing_jacket", "packing"):
            if getattr(self, name) not in ROLES:
                raise ValueError(f"boundary.{name} must be one of {ROLES}")
        if self.jacket_normal != "auto":
            try:
                [float(s) for s in self.jacket_normal.split(",")]
            except ValueError:
                raise ValueError(f"bad jacket_normal {self.jacket_normal!r}") from None

    def role(self, tag) -> str:
        return getattr(self, BoundaryTag(tag).name.lower())


@dataclass
class OptimizerConfig:
    """Gradient ascent settings.

    Step lengths are the maximum vertex displacement in units of the mean
    cell diameter of the initial mesh; ``trust_radius`` is a fraction of the
    bounding-box diagonal.  With ``preserve_area`` the ascent direction is
    projected so that the packing area is stationary to first order.
    """

    max_iterations: int = 50
    initial_step: float = 0.25
    armijo: float = 1e-4
    shrink: float = 0.5
    grow: float = 1.5
    max_halvings: int = 20
    quality_floor: float = 0.1
    gtol: float = 1e-8
    trust_radius: float = 0.05
    audit_every: int = 0
    vtk_every: int = 10
    preserve_area: bool = False

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not 0.0 < self.armijo < 1.0:
            raise ValueError("armijo constant must lie in (0, 1)")
        if not 0.0 < self.shrink < 1.0 or self.grow < 1.0:
            raise ValueError("need 0 < shrink < 1 <= grow")
        if self.initial_step <= 0 or self.trust_radius <= 0 or self.gtol < 0:
            raise ValueError("initial_step and trust_radius must be positive")
        if not 0.0 <= self.quality_floor < 1.0:
            raise ValueError("quality_floor must lie in [0, 1)")


@dataclass
class OptimizationRecord:
    iteration: int
    J: float
    beta: float
    c_out: float
    dp: float
    a_geo: float
    min_quality: float
    step: float
    grad_norm: float


HISTORY_FIELDS = ("iter", "J", "beta", "c_out", "dp", "a_geo", "min_quality", "step", "grad_norm")


# ------------------------------------------------------------------ forward

@dataclass
class ForwardSolution:
    mesh: Mesh
    flow_problem: FlowProblem
    transport_problem: TransportProblem
    x: np.ndarray
    flow: object
    concentration: object
    metrics: CaseMetrics


def forward(mesh: Mesh, cfg, guess=None, flow_cfg=None) -> ForwardSolution:
    """Solve flow and transport on ``mesh`` and evaluate the metrics."""
    fcfg = flow_cfg or cfg.flow_solver
    fp = FlowProblem(mesh, cfg.fluid, cfg.inlet, fcfg)
    flow = solve_flow(mesh, cfg.fluid, cfg.inlet, fcfg, initial=guess, problem=fp)
    tp = TransportProblem(mesh, flow.u, cfg.transport, cfg.transport_solver)
    conc = solve_transport(mesh, flow.u, cfg.transport, cfg.transport_solver, problem=tp)
    m = compute_metrics(mesh, flow, conc, cfg.transport.c_in, cfg.transport.c_pack)
    return ForwardSolution(mesh, fp, tp, flow.vector(), flow, conc, m)


# ------------------------------------------------------------------ objective

def _area_vectors(xf):
    if xf.shape[-1] == 2:
        t = xf[:, 1] - xf[:, 0]
        return jnp.stack([t[:, 1], -t[:, 0]], axis=1)
    return 0.5 * jnp.cross(xf[:, 1] - xf[:, 0], xf[:, 2] - xf[:, 0])


def _objective(X, U, C, f_in, f_out, f_pack, lam, w, c_in, c_pack):
    def flux(f, weight=None):
        a = _area_vectors(X[f])
        un = jnp.einsum("qk,fki,fi->fq", lam, U[f], a)
        if weight is not None:
            un = un * jnp.einsum("qk,fk->fq", lam, weight[f])
        return jnp.sum(un @ w)

    vdot = jnp.abs(flux(f_in))
    c_out = flux(f_out, C) / flux(f_out)
    area = jnp.sum(jnp.linalg.norm(_area_vectors(X[f_pack]), axis=1))
    return vdot / area * jnp.log((c_pack - c_in) / (c_pack - c_out))


_objective_grad = jax.jit(jax.value_and_grad(_objective, argnums=(0, 1, 2)))


def objective_partials(mesh: Mesh, u, c, c_in: float, c_pack: float):
    """``J`` and its partial derivatives w.r.t. coordinates, velocity and
    concentration, each shaped like the argument."""
    lam, w = fem.facet_quadrature(mesh.dim)
    fac = lambda tags: mesh.facets[mesh.tag_facets(tags)]  # noqa: E731
    J, (gX, gU, gC) = _objective_grad(
        mesh.vertices, np.asarray(u), np.asarray(c),
        fac(BoundaryTag.INLET), fac(BoundaryTag.OUTLET),
        fac([BoundaryTag.PACKING, BoundaryTag.PACKING_JACKET]),
        lam, w, c_in, c_pack)
    return float(J), np.asarray(gX), np.asarray(gU), np.asarray(gC)


# ------------------------------------------------------------------ adjoint

@dataclass
class AdjointState:
    """Adjoint concentration ``z`` (nv,), velocity ``lam_u`` (nv, dim) and
    pressure ``lam_p`` (nv,).  ``explicit`` is the partial ``dJ/dX``."""

    z: np.ndarray
    lam_u: np.ndarray
    lam_p: np.ndarray
    lam: np.ndarray
    explicit: np.ndarray


def solve_adjoint(fwd: ForwardSolution, cfg=None, objective=None) -> AdjointState:
    """Adjoint transport then adjoint flow.

    ``objective`` optionally replaces :func:`objective_partials`; it must
    return ``(J, dJ/dX, dJ/du, dJ/dc)``.
    """
    mesh = fwd.mesh
    linear = getattr(cfg, "linear", None) if cfg is not None else None
    c = fwd.concentration.values
    part = objective or (lambda: objective_partials(mesh, fwd.flow.u, c,
                                                    fwd.transport_problem.props.c_in,
                                                    fwd.transport_problem.props.c_pack))
    _, gX, gU, gC = part()

    tp = fwd.transport_problem
    K, _ = tp.system()
    rhs_c = -gC.copy()
    rhs_c[tp.bc_dofs] = 0.0
    z = solve_linear(K.T.tocsr(), rhs_c, linear)

    fp = fwd.flow_problem
    _, coupling = tp.vjp(c, z)
    rhs_u = -(fp.V.join(gU + coupling, np.zeros(fp.size)))
    rhs_u[fp.bc_dofs] = 0.0
    A = fp.jacobian(fwd.x)
    lam = solve_linear(A.T.tocsr(), rhs_u, linear)
    return AdjointState(z, fp.V.split(lam).copy(), fp.Q.split(lam)[:, 0].copy(), lam, gX)


def shape_derivative(fwd: ForwardSolution, adj: AdjointState) -> np.ndarray:
    """Total derivative of ``J`` w.r.t. all vertex coordinates, (nv, dim)."""
    gx_c, _ = fwd.transport_problem.vjp(fwd.concentration.values, adj.z)
    gx_f, _ = fwd.flow_problem.vjp(fwd.x, adj.lam)
    return adj.explicit + gx_c + gx_f


# ------------------------------------------------------------------ extension

FIXED, SLIDING, FREE, INTERIOR = 3, 2, 1, 0


def vertex_roles(mesh: Mesh, roles: BoundaryRoles) -> np.ndarray:
    """Per-vertex role code; fixed beats sliding beats free."""
    code = np.full(mesh.num_vertices, INTERIOR, dtype=np.int64)
    value = {"free": FREE, "sliding": SLIDING, "fixed": FIXED}
    for tag in BoundaryTag:
        verts = mesh.tag_vertices(tag)
        if len(verts):
            code[verts] = np.maximum(code[verts], value[roles.role(tag)])
    return code


def sliding_normals(mesh: Mesh, roles: BoundaryRoles, codes=None) -> np.ndarray:
    """Unit normals (nv, dim) at sliding vertices, zero elsewhere."""
    codes = vertex_roles(mesh, roles) if codes is None else codes
    normals = np.zeros_like(mesh.vertices)
    sliding = codes == SLIDING
    if not sliding.any():
        return normals
    if roles.jacket_normal != "auto":
        n = np.array([float(s) for s in roles.jacket_normal.split(",")])
        if n.shape != (mesh.dim,):
            raise ValueError("jacket_normal has the wrong dimension")
        normals[sliding] = n / np.linalg.norm(n)
        return normals
    tags = [t for t in BoundaryTag if roles.role(t) == "sliding"]
    fids = mesh.tag_facets(tags)
    n, meas = facet_normals(mesh, fids)
    for i in range(mesh.dim):
        normals[:, i] = np.bincount(mesh.facets[fids].ravel(),
                                    weights=np.repeat(n[:, i] * meas, mesh.dim),
                                    minlength=mesh.num_vertices)
    normals[~sliding] = 0.0
    normals[sliding] /= np.linalg.norm(normals[sliding], axis=1)[:, None]
    return normals


def _tangent_basis(n):
    if len(n) == 2:
        return [np.array([-n[1], n[0]])]
    a = np.eye(3)[np.argmin(np.abs(n))]
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1)
    return [t1, np.cross(n, t1)]


class Extension:
    """Constrained elasticity extension on one mesh.

    Reduced coordinates ``r`` map to vertex displacements ``T r``; fixed
    vertices have no coordinates and sliding vertices only tangential ones.
    """

    def __init__(self, mesh: Mesh, codes: np.ndarray, normals: np.ndarray):
        self.mesh = mesh
        nv, d = mesh.num_vertices, mesh.dim
        rows, cols, vals, boundary = [], [], [], []
        col = 0
        for v in range(nv):
            if codes[v] == FIXED:
                continue
            basis = _tangent_basis(normals[v]) if codes[v] == SLIDING else list(np.eye(d))
            for b in basis:
                for i in range(d):
                    if b[i] != 0.0:
                        rows.append(i * nv + v)
                        cols.append(col)
                        vals.append(b[i])
                boundary.append(codes[v] != INTERIOR)
                col += 1
        self.T = sp.csr_matrix((vals, (rows, cols)), shape=(nv * d, col))
        self.boundary = np.array(boundary, dtype=bool)
        self.movable = bool(self.boundary.any())
        if self.movable and not np.any(codes == FIXED):
            raise MeshError("singular extension system: no fixed vertices")
        if col:
            A = elasticity_matrix(FunctionSpace(mesh, d))
            self.Ar = (self.T.T @ A @ self.T).tocsc()
        else:
            self.Ar = None

    def _flat(self, g):
        return np.asarray(g).T.ravel()

    def _unflat(self, x):
        return x.reshape(self.mesh.dim, self.mesh.num_vertices).T

    def reduced_sensitivity(self, g_raw):
        """Sensitivity w.r.t. boundary coordinates when the interior follows
        by elastic extension."""
        s = self.T.T @ self._flat(g_raw)
        B, I = self.boundary, ~self.boundary
        out = np.zeros_like(s)
        if I.any():
            A_II = self.Ar[I][:, I]
            A_BI = self.Ar[B][:, I]
            out[B] = s[B] - A_BI @ solve_linear(A_II, s[I])
        else:
            out[B] = s[B]
        return out

    def riesz(self, g_raw):
        if not self.movable:
            return np.zeros_like(self.mesh.vertices)
        rhs = self.reduced_sensitivity(g_raw)
        return self._unflat(self.T @ solve_linear(self.Ar, rhs))

    def smooth(self, r):
        """Displacement field ``T Ar^-1 r`` for reduced data ``r``."""
        if self.Ar is None:
            return np.zeros_like(self.mesh.vertices)
        return self._unflat(self.T @ solve_linear(self.Ar, r))


@dataclass
class ShapeGradient:
    g_raw: np.ndarray
    g: np.ndarray

    @property
    def norm(self) -> float:
        """Riesz norm ``sqrt(g_raw . g)``."""
        return float(np.sqrt(max(np.sum(self.g_raw * self.g), 0.0)))


def area_sensitivity(mesh: Mesh) -> np.ndarray:
    """Derivative of the packing area w.r.t. vertex coordinates, (nv, dim)."""
    f = mesh.facets[mesh.tag_facets([BoundaryTag.PACKING, BoundaryTag.PACKING_JACKET])]
    return np.asarray(_area_grad(mesh.vertices, f))


_area_grad = jax.jit(jax.grad(lambda X, f: jnp.sum(jnp.linalg.norm(_area_vectors(X[f]), axis=1))))


def project_out(grad: ShapeGradient, c_raw, c_riesz) -> ShapeGradient:
    """Remove from ``grad`` its component along the constraint with raw
    sensitivity ``c_raw`` and Riesz representative ``c_riesz``, orthogonally
    in the extension inner product.  The constraint value is then
    stationary along the returned direction."""
    cc = float(np.sum(c_raw * c_riesz))
    if cc <= 0.0:
        return grad
    gc = float(np.sum(c_raw * grad.g))
    return ShapeGradient(grad.g_raw, grad.g - gc / cc * c_riesz)


def riesz_gradient(mesh: Mesh, g_raw, roles: BoundaryRoles | None = None,
                   normals=None) -> ShapeGradient:
    """Smoothed ascent direction from the raw coordinate sensitivity.

    Solves ``a(g, v) = dJ[v]`` with ``a(g, v) = (grad g, grad v) + (div g,
    div v)`` over displacements that vanish on fixed parts, are tangential
    on sliding parts, and whose interior values are the elastic extension
    of their boundary values.
    """
    roles = roles or BoundaryRoles()
    g_raw = np.asarray(g_raw, dtype=float)
    if not np.all(np.isfinite(g_raw)):
        raise ValueError("non-finite shape sensitivity")
    codes = vertex_roles(mesh, roles)
    if normals is None:
        normals = sliding_normals(mesh, roles, codes)
    ext = Extension(mesh, codes, normals)
    return ShapeGradient(g_raw, ext.riesz(g_raw))


def shape_gradient(fwd: ForwardSolution, cfg, normals=None) -> ShapeGradient:
    adj = solve_adjoint(fwd, cfg)
    return riesz_gradient(fwd.mesh, shape_derivative(fwd, adj), cfg.boundary, normals)


# ------------------------------------------------------------------ gradient check

@dataclass
class GradCheckRow:
    direction: int
    eps: float
    fd: float
    adjoint: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.fd), abs(self.adjoint))
        return abs(self.fd - self.adjoint) / scale if scale > 0 else 0.0


def admissible_directions(mesh: Mesh, roles: BoundaryRoles, n: int, seed: int = 0,
                          normals=None):
    """Random smooth displacements satisfying the boundary constraints,
    scaled to unit maximum vertex displacement."""
    codes = vertex_roles(mesh, roles)
    if normals is None:
        normals = sliding_normals(mesh, roles, codes)
    ext = Extension(mesh, codes, normals)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        if ext.Ar is None:
            out.append(np.zeros_like(mesh.vertices))
            continue
        V = ext.smooth(rng.standard_normal(ext.Ar.shape[0]))
        out.append(V / np.abs(V).max() if np.abs(V).max() > 0 else V)
    return out


def gradcheck(mesh: Mesh, cfg, directions: int = 10, eps=(1e-5, 1e-6, 1e-7), seed: int = 0,
              solve_rtol: float = 1e-12) -> list[GradCheckRow]:
    """Central finite differences of ``J`` against ``g_raw . V``.

    ``eps`` values are relative to the mean cell diameter.  Forward solves
    are tightened to ``solve_rtol`` so that differences are not drowned by
    solver tolerance.
    """
    fcfg = replace(cfg.flow_solver, rel_tol=solve_rtol, max_iter=60)
    base = forward(mesh, cfg, flow_cfg=fcfg)
    g_raw = shape_derivative(base, solve_adjoint(base, cfg))
    h = float(cell_diameters(mesh).mean())
    rows = []
    for k, V in enumerate(admissible_directions(mesh, cfg.boundary, directions, seed)):
        exact = float(np.sum(g_raw * V))
        for e in eps:
            step = e * h
            Jp = forward(mesh.with_vertices(mesh.vertices + step * V), cfg, base.flow, fcfg).metrics.J
            Jm = forward(mesh.with_vertices(mesh.vertices - step * V), cfg, base.flow, fcfg).metrics.J
            rows.append(GradCheckRow(k, e, (Jp - Jm) / (2 * step), exact))
    return rows


# ------------------------------------------------------------------ line search

@dataclass
class LineSearchResult:
    accepted: bool
    step: float
    forward: ForwardSolution
    trials: int = 0
    rejections: list = field(default_factory=list)


def line_search_step(fwd: ForwardSolution, grad: ShapeGradient, cfg, step: float) -> LineSearchResult:
    """Backtracking Armijo step along ``grad.g`` scaled to unit max norm.

    ``step`` is the trial maximum vertex displacement (metres).  A trial
    is rejected when the moved mesh violates the quality floor, a solver
    fails, or the Armijo increase is not met; the step then shrinks.
    """
    ocfg = cfg.optimizer
    gmax = float(np.abs(grad.g).max()) if grad.g.size else 0.0
    if gmax == 0.0:
        return LineSearchResult(False, 0.0, fwd)
    direction = grad.g / gmax
    slope = float(np.sum(grad.g_raw * direction))
    if slope <= 0.0:
        return LineSearchResult(False, 0.0, fwd)
    J0 = fwd.metrics.J
    t = step
    reasons = []
    for trial in range(ocfg.max_halvings + 1):
        try:
            cand = apply_displacement(fwd.mesh, t * direction, ocfg.quality_floor)
            new = forward(cand, cfg, guess=fwd.flow)
        except InvalidDisplacement as exc:
            reasons.append(f"t={t:.3e}: {exc}")
        except (SolverError, MetricError) as exc:
            reasons.append(f"t={t:.3e}: {type(exc).__name__}: {exc}")
        else:
            # strict: at roundoff-sized steps J0 + sigma*t*slope rounds to J0
            if new.metrics.J > J0 and new.metrics.J >= J0 + ocfg.armijo * t * slope:
                return LineSearchResult(True, t, new, trial + 1, reasons)
            reasons.append(f"t={t:.3e}: no sufficient increase ({new.metrics.J:.6e})")
        t *= ocfg.shrink
    return LineSearchResult(False, 0.0, fwd, ocfg.max_halvings + 1, reasons)


# ------------------------------------------------------------------ driver

class OptimizationError(RuntimeError):
    """Optimization aborted; ``result`` holds everything up to the failure."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass
class OptimizationResult:
    mesh: Mesh
    initial_mesh: Mesh
    history: list
    status: str
    forward: ForwardSolution | None = None
    audits: list = field(default_factory=list)
    max_displacement: float = 0.0
    trust_radius: float = 0.0

    @property
    def within_trust_region(self) -> bool:
        return self.max_displacement <= self.trust_radius


def _record(k, fwd, step, gnorm) -> OptimizationRecord:
    m = fwd.metrics
    return OptimizationRecord(k, m.J, m.beta, m.c_out, m.dp, m.a_geo,
                              min_quality(fwd.mesh), step, gnorm)


def optimize(mesh: Mesh, cfg, callback=None) -> OptimizationResult:
    """Maximize ``J`` over vertex positions by Armijo gradient ascent.

    One history record per iteration, including iteration 0.  ``callback``
    is called as ``callback(record, forward_solution)`` after each record.
    """
    ocfg = cfg.optimizer
    codes = vertex_roles(mesh, cfg.boundary)
    normals = sliding_normals(mesh, cfg.boundary, codes)
    h_ref = float(cell_diameters(mesh).mean())
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    result = OptimizationResult(mesh, mesh, [], "running",
                                trust_radius=ocfg.trust_radius * float(np.linalg.norm(hi - lo)))
    rng = np.random.default_rng(cfg.seed)

    fwd = forward(mesh, cfg)
    step_taken, t, g0 = 0.0, ocfg.initial_step * h_ref, None
    for k in range(ocfg.max_iterations + 1):
        try:
            adj = solve_adjoint(fwd, cfg)
            g_raw = shape_derivative(fwd, adj)
            ext = Extension(fwd.mesh, codes, normals)
            grad = ShapeGradient(g_raw, ext.riesz(g_raw))
            if ocfg.preserve_area:
                dA = area_sensitivity(fwd.mesh)
                grad = project_out(grad, dA, ext.riesz(dA))
        except SolverError as exc:
            result.status = "aborted"
            raise OptimizationError(f"adjoint failed at iteration {k}: {exc}", result) from exc
        gnorm = grad.norm
        rec = _record(k, fwd, step_taken, gnorm)
        result.history.append(rec)
        result.mesh, result.forward = fwd.mesh, fwd
        log.info("it %3d  J=%.6e  c_out=%.4f  a_geo=%.5e  q=%.3f  step=%.2e  |g|=%.3e",
                 k, rec.J, rec.c_out, rec.a_geo, rec.min_quality, step_taken, gnorm)
        if callback is not None:
            callback(rec, fwd)
        if ocfg.audit_every and k % ocfg.audit_every == 0:
            result.audits.append(_audit(fwd, g_raw, ext, cfg, rng, h_ref))
        if k == ocfg.max_iterations:
            result.status = "max_iterations"
            break
        g0 = gnorm if g0 is None else g0
        if gnorm == 0.0 or gnorm <= ocfg.gtol * g0:
            result.status = "converged"
            break
        ls = line_search_step(fwd, grad, cfg, t)
        if not ls.accepted:
            log.info("line search stalled: %s", "; ".join(ls.rejections[-3:]))
            result.status = "stalled"
            break
        fwd, step_taken = ls.forward, ls.step
        t = ls.step * ocfg.grow
    result.max_displacement = float(np.linalg.norm(result.mesh.vertices - mesh.vertices, axis=1).max())
    if not result.within_trust_region:
        log.warning("final displacement %.3e exceeds trust radius %.3e",
                    result.max_displacement, result.trust_radius)
    return result


def _audit(fwd, g_raw, ext, cfg, rng, h_ref):
    """One-direction central-difference check of ``g_raw``."""
    V = ext.smooth(rng.standard_normal(ext.Ar.shape[0])) if ext.Ar is not None else None
    if V is None or not np.abs(V).max():
        return None
    V = V / np.abs(V).max()
    step = 1e-6 * h_ref
    fcfg = replace(cfg.flow_solver, rel_tol=1e-12, max_iter=60)
    X = fwd.mesh.vertices
    Jp = forward(fwd.mesh.with_vertices(X + step * V), cfg, fwd.flow, fcfg).metrics.J
    Jm = forward(fwd.mesh.with_vertices(X - step * V), cfg, fwd.flow, fcfg).metrics.J
    row = GradCheckRow(0, 1e-6, (Jp - Jm) / (2 * step), float(np.sum(g_raw * V)))
    log.info("gradient audit: fd=%.6e adjoint=%.6e rel=%.2e", row.fd, row.adjoint, row.rel_error)
    return row
