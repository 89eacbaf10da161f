"""Stabilized steady incompressible Navier-Stokes with equal-order P1/P1.

Galerkin form::

    mu (grad u, grad v) + rho ((u . grad) u, v) - (p, div v) + (div u, q)

plus SUPG/PSPG (the strong momentum residual ``rho (u . grad) u + grad p``
weighted by ``tau_mom`` and tested with ``rho (u . grad) v`` and ``grad q``)
and grad-div (``tau_lsic (div u, div v)``).  The viscous term is absent from
the P1 strong residual.  The outlet is do-nothing: no boundary integral.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from . import fem
from .fem import (DirichletBC, FunctionSpace, LinearSolverConfig, NewtonDivergence,
                  NewtonMaxIterations, apply_dirichlet, collect_dirichlet)
from .mesh import WALL_TAGS, BoundaryTag, Mesh, MeshError, cell_diameters, facet_normals

log = logging.getLogger(__name__)


@dataclass
class FluidProps:
    mu: float = 1.728e-5
    rho: float = 1.138

    def __post_init__(self):
        if self.mu <= 0 or self.rho <= 0:
            raise ValueError("viscosity and density must be positive")


@dataclass
class InletSpec:
    """Inlet velocity: mean normal speed and profile shape."""

    speed: float = 0.933
    profile: str = "uniform"

    def __post_init__(self):
        if self.profile not in ("uniform", "parabolic"):
            raise ValueError(f"unknown inlet profile {self.profile!r}")


@dataclass
class FlowSolverConfig:
    rel_tol: float = 1e-5
    max_iter: int = 30
    linear: LinearSolverConfig = field(default_factory=LinearSolverConfig)
    continuation: bool = True
    continuation_steps: int = 4
    supg: bool = True
    pspg: bool = True
    graddiv: bool = True


@dataclass
class StabilizationParams:
    tau_mom: np.ndarray
    tau_lsic: np.ndarray
    supg: bool = True
    pspg: bool = True
    graddiv: bool = True


@dataclass
class FlowState:
    """Converged velocity ``u`` (nv, dim) and pressure ``p`` (nv,)."""

    u: np.ndarray
    p: np.ndarray
    iterations: int = 0
    residual_norm: float = 0.0
    divergence_l2: float = 0.0

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.T.ravel(), self.p])


def tau_momentum(speed, h, mu, rho):
    """SUPG/PSPG parameter; works on numpy and jax arrays."""
    return ((2.0 * rho * speed / h) ** 2 + (4.0 * mu / h ** 2) ** 2) ** -0.5


def tau_graddiv(speed, h, rho):
    return 0.5 * rho * speed * h


def _midpoint_speed(mesh, u):
    return np.linalg.norm(np.asarray(u)[mesh.cells].mean(axis=1), axis=1)


def compute_tau_flow(mesh: Mesh, u, props: FluidProps) -> StabilizationParams:
    """Per-cell stabilization parameters from the midpoint velocity."""
    h = cell_diameters(mesh)
    if np.any(h <= 0):
        raise MeshError("degenerate cell (zero diameter)")
    speed = _midpoint_speed(mesh, u)
    return StabilizationParams(tau_momentum(speed, h, props.mu, props.rho),
                               tau_graddiv(speed, h, props.rho))


# ----------------------------------------------------------------- kernels

def _element_residual(xe, xl, mu, rho, convection, supg, pspg, graddiv):
    k, d = xe.shape
    U = xl[:d * k].reshape(d, k).T
    P = xl[d * k:]
    G, vol, h = fem.jax_geometry(xe)
    lam, w = (jnp.asarray(a) for a in fem.cell_quadrature(d))
    gu = U.T @ G
    gp = P @ G
    div = jnp.trace(gu)
    uq = lam @ U
    pq = lam @ P
    speed = fem.safe_norm(U.mean(axis=0))
    c = 1.0 if convection else 0.0
    convq = uq @ gu.T
    strong = c * rho * convq + gp[None, :]

    mom = mu * vol * (G @ gu.T)
    mom = mom + c * rho * vol * jnp.einsum("q,qa,qi->ai", w, lam, convq)
    mom = mom - vol * jnp.dot(w, pq) * G
    cont = vol * div / k * jnp.ones(k)
    if supg or pspg:
        tau = tau_momentum(speed, h, mu, rho)
        if supg and convection:
            mom = mom + tau * rho * vol * jnp.einsum("q,qi,qa->ai", w, strong, uq @ G.T)
        if pspg:
            cont = cont + tau * vol * G @ (w @ strong)
    if graddiv:
        mom = mom + tau_graddiv(speed, h, rho) * vol * div * G
    return jnp.concatenate([mom.T.ravel(), cont])


_STATIC = ("convection", "supg", "pspg", "graddiv")


@partial(jax.jit, static_argnames=_STATIC)
def _batch_residual(xe, xl, mu, rho, convection, supg, pspg, graddiv):
    f = partial(_element_residual, convection=convection, supg=supg, pspg=pspg, graddiv=graddiv)
    return jax.vmap(f, in_axes=(0, 0, None, None))(xe, xl, mu, rho)


@partial(jax.jit, static_argnames=_STATIC)
def _batch_jacobian(xe, xl, mu, rho, convection, supg, pspg, graddiv):
    f = partial(_element_residual, convection=convection, supg=supg, pspg=pspg, graddiv=graddiv)
    return jax.vmap(jax.jacfwd(f, argnums=1), in_axes=(0, 0, None, None))(xe, xl, mu, rho)


@partial(jax.jit, static_argnames=_STATIC)
def _batch_vjp(xe, xl, ct, mu, rho, convection, supg, pspg, graddiv):
    """Element cotangents of ``ct . R`` w.r.t. coordinates and local dofs."""
    f = partial(_element_residual, convection=convection, supg=supg, pspg=pspg, graddiv=graddiv)

    def one(x, s, c):
        _, pull = jax.vjp(lambda a, b: f(a, b, mu, rho), x, s)
        return pull(c)

    return jax.vmap(one)(xe, xl, ct)


# ----------------------------------------------------------------- problem

def inlet_velocity(mesh: Mesh, inlet: InletSpec):
    """Callable giving the inlet velocity at points, pointing into the domain."""
    fids = mesh.tag_facets(BoundaryTag.INLET)
    if not len(fids):
        raise MeshError("mesh has no inlet facets")
    n, m = facet_normals(mesh, fids)
    nbar = (n * m[:, None]).sum(axis=0)
    nbar /= np.linalg.norm(nbar)
    direction = -nbar
    if inlet.profile == "uniform":
        return lambda x: np.outer(np.full(len(x), inlet.speed), direction)
    if mesh.dim != 2:
        raise NotImplementedError("parabolic inlet profile is only defined in 2D")
    t = np.array([-nbar[1], nbar[0]])
    s_all = mesh.vertices[mesh.tag_vertices(BoundaryTag.INLET)] @ t
    s0, width = s_all.min(), s_all.max() - s_all.min()

    def profile(x):
        s = (x @ t - s0) / width
        return np.outer(6.0 * inlet.speed * s * (1.0 - s), direction)

    return profile


class FlowProblem:
    """Discrete stabilized Navier-Stokes residual and Jacobian on one mesh.

    State vectors hold all velocity components followed by pressure.
    Dirichlet rows are replaced: for states that satisfy the boundary data
    the residual is zero there and the Jacobian has identity rows/columns.
    """

    def __init__(self, mesh: Mesh, props: FluidProps, inlet: InletSpec,
                 cfg: FlowSolverConfig | None = None, wall_tags=WALL_TAGS):
        self.mesh = mesh
        self.props = props
        self.inlet = inlet
        self.cfg = cfg or FlowSolverConfig()
        d, nv = mesh.dim, mesh.num_vertices
        self.V = FunctionSpace(mesh, d, 0)
        self.Q = FunctionSpace(mesh, 1, d * nv)
        self.size = (d + 1) * nv
        self.dofmap = np.concatenate([self.V.dofmap(), self.Q.dofmap()], axis=1)
        self.xe = mesh.vertices[mesh.cells]
        bcs = [DirichletBC(self.V, [BoundaryTag.INLET], inlet_velocity(mesh, inlet))]
        walls = [t for t in wall_tags if mesh.has_tag(t)]
        if walls:
            bcs.append(DirichletBC(self.V, walls, 0.0))
        self.bc_dofs, self.bc_values = collect_dirichlet(bcs)

    def _flags(self, convection=True):
        c = self.cfg
        return dict(convection=convection, supg=c.supg, pspg=c.pspg, graddiv=c.graddiv)

    def _local(self, x):
        return np.asarray(x)[self.dofmap]

    def lift(self, x=None) -> np.ndarray:
        """Copy of ``x`` (default zeros) with boundary values imposed."""
        x = np.zeros(self.size) if x is None else np.array(x, dtype=float)
        x[self.bc_dofs] = self.bc_values
        return x

    def raw_residual(self, x, mu=None, convection=True) -> np.ndarray:
        mu = self.props.mu if mu is None else mu
        loc = _batch_residual(self.xe, self._local(x), mu, self.props.rho, **self._flags(convection))
        return fem.assemble_vector(self.dofmap, np.asarray(loc), self.size)

    def residual(self, x, mu=None, convection=True) -> np.ndarray:
        r = self.raw_residual(x, mu, convection)
        r[self.bc_dofs] = np.asarray(x)[self.bc_dofs] - self.bc_values
        return r

    def raw_jacobian(self, x, mu=None, convection=True):
        mu = self.props.mu if mu is None else mu
        loc = _batch_jacobian(self.xe, self._local(x), mu, self.props.rho, **self._flags(convection))
        return fem.assemble_matrix(self.dofmap, self.dofmap, np.asarray(loc), (self.size, self.size))

    def jacobian(self, x, mu=None, convection=True):
        A, _ = apply_dirichlet(self.raw_jacobian(x, mu, convection), np.zeros(self.size), self.bc_dofs)
        return A

    def vjp(self, x, cotangent):
        """``cotangent . R`` pulled back to coordinates (nv, dim) and state."""
        ct = np.asarray(cotangent)[self.dofmap]
        gx, gs = _batch_vjp(self.xe, self._local(x), ct, self.props.mu, self.props.rho,
                            **self._flags())
        mesh = self.mesh
        gX = np.stack([np.bincount(mesh.cells.ravel(), weights=np.asarray(gx)[:, :, i].ravel(),
                                   minlength=mesh.num_vertices) for i in range(mesh.dim)], axis=1)
        gS = fem.assemble_vector(self.dofmap, np.asarray(gs), self.size)
        return gX, gS

    def state(self, x, **diag) -> FlowState:
        return FlowState(self.V.split(x).copy(), self.Q.split(x)[:, 0].copy(), **diag)

    def divergence_l2(self, x) -> float:
        grads, vol = fem.element_geometry(self.mesh)
        U = self.V.split(x)[self.mesh.cells]
        div = np.einsum("nai,nai->n", U, grads)
        return float(np.sqrt(np.sum(vol * div ** 2)))


def flow_residual(state: FlowState, mesh: Mesh, props: FluidProps, inlet: InletSpec | None = None,
                  cfg: FlowSolverConfig | None = None) -> np.ndarray:
    """Assembled residual (Dirichlet rows replaced) at ``state``."""
    prob = FlowProblem(mesh, props, inlet or InletSpec(), cfg)
    return prob.residual(state.vector())


def flow_jacobian(state: FlowState, mesh: Mesh, props: FluidProps, inlet: InletSpec | None = None,
                  cfg: FlowSolverConfig | None = None):
    prob = FlowProblem(mesh, props, inlet or InletSpec(), cfg)
    return prob.jacobian(state.vector())


def solve_flow(mesh: Mesh, props: FluidProps, inlet: InletSpec,
               cfg: FlowSolverConfig | None = None, initial: FlowState | None = None,
               problem: FlowProblem | None = None) -> FlowState:
    """Newton solve of the stabilized flow problem.

    Without an initial guess a Stokes solve seeds Newton.  If Newton fails,
    the solve is repeated along a geometric viscosity continuation ending
    at the true viscosity.  Convergence is measured relative to the
    residual of the boundary-data-only state, so an exact discrete solution
    passed as ``initial`` returns after zero iterations.
    """
    cfg = cfg or FlowSolverConfig()
    prob = problem or FlowProblem(mesh, props, inlet, cfg)
    x_bc = prob.lift()
    ref = float(np.linalg.norm(prob.residual(x_bc)))
    if ref == 0.0:
        return prob.state(x_bc)

    def run(x0, mu, convection=True):
        return fem.newton_solve(
            lambda x: prob.residual(x, mu, convection),
            lambda x: prob.jacobian(x, mu, convection),
            x0, rel_tol=cfg.rel_tol, max_iter=cfg.max_iter, linear=cfg.linear,
            reference_norm=ref)

    iterations = 0
    if initial is not None:
        x0 = prob.lift(initial.vector())
    else:
        stokes = run(x_bc, props.mu, convection=False)
        x0, iterations = stokes.x, stokes.iterations
    try:
        res = run(x0, props.mu)
        iterations += res.iterations
    except (NewtonDivergence, NewtonMaxIterations) as exc:
        if not cfg.continuation:
            raise
        log.info("direct Newton failed (%s); viscosity continuation", exc)
        n = cfg.continuation_steps
        x = x0
        for j in range(n):
            mu_j = props.mu * 2.0 ** (n - 1 - j)
            res = run(x, mu_j)
            x = res.x
            iterations += res.iterations
    return prob.state(res.x, iterations=iterations, residual_norm=res.residual_norms[-1],
                      divergence_l2=prob.divergence_l2(res.x))
