"""P1 Lagrange finite element infrastructure.

Quadrature, dof maps, deterministic sparse assembly, Dirichlet conditions
and the linear / Newton solvers shared by the flow, transport and shape
gradient problems.

Dof layout is field-major: component ``i`` of vertex ``v`` in a space with
offset ``o`` lives at ``o + i * nv + v``.  Element-local vectors use the
same ordering, ``i * (dim + 1) + a`` for local vertex ``a``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import jax
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_jacobi, roots_legendre

from .mesh import Mesh, MeshError

jax.config.update("jax_enable_x64", True)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class for solver failures."""


class LinearSolverError(SolverError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NewtonDivergence(SolverError):
    """Backtracking could not reduce the residual."""


class NewtonMaxIterations(SolverError):
    """Iteration limit reached before the tolerance."""


# ---------------------------------------------------------------- quadrature

def _dunavant4():
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts, wts = [], []
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w] * 3
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


def _collapsed_tet(n=3):
    """Conical-product (Stroud) rule on the tetrahedron, degree 2n-1."""
    rules = []
    for alpha in (2, 1, 0):
        x, w = roots_jacobi(n, alpha, 0)
        rules.append(((x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)))
    (t1, w1), (t2, w2), (t3, w3) = rules
    pts, wts = [], []
    for a, wa in zip(t1, w1):
        for b, wb in zip(t2, w2):
            for c, wc in zip(t3, w3):
                xi1 = a
                xi2 = b * (1 - a)
                xi3 = c * (1 - a) * (1 - b)
                pts.append((1 - xi1 - xi2 - xi3, xi1, xi2, xi3))
                wts.append(wa * wb * wc)
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


def _gauss_edge(n=3):
    x, w = roots_legendre(n)
    t = (x + 1.0) / 2.0
    return np.column_stack([1.0 - t, t]), w / w.sum()


def cell_quadrature(dim: int):
    """Barycentric points and weights (summing to one) of the cell rule.

    Degree 4 on triangles, degree 5 on tetrahedra.
    """
    return _dunavant4() if dim == 2 else _collapsed_tet()


def facet_quadrature(dim: int):
    """Rule on boundary facets of a ``dim``-dimensional mesh."""
    return _gauss_edge() if dim == 2 else _dunavant4()


# ---------------------------------------------------------------- spaces

@dataclass(eq=False)
class FunctionSpace:
    """Continuous P1 space with ``value_dim`` components per vertex."""

    mesh: Mesh
    value_dim: int = 1
    offset: int = 0

    @property
    def size(self) -> int:
        return self.mesh.num_vertices * self.value_dim

    def dofs(self, vertices, component=None) -> np.ndarray:
        vertices = np.asarray(vertices, dtype=np.int64)
        comps = range(self.value_dim) if component is None else np.atleast_1d(component)
        nv = self.mesh.num_vertices
        return np.concatenate([self.offset + c * nv + vertices for c in comps])

    def dofmap(self) -> np.ndarray:
        """(nc, value_dim * (dim+1)) global dof indices per cell."""
        cells = self.mesh.cells
        nv = self.mesh.num_vertices
        return np.concatenate(
            [self.offset + c * nv + cells for c in range(self.value_dim)], axis=1)

    def split(self, x) -> np.ndarray:
        """View of this space's block of ``x`` as (nv, value_dim)."""
        nv = self.mesh.num_vertices
        block = np.asarray(x)[self.offset:self.offset + self.size]
        return block.reshape(self.value_dim, nv).T

    def join(self, values, out=None) -> np.ndarray:
        values = np.asarray(values, dtype=float).reshape(self.mesh.num_vertices, self.value_dim)
        if out is None:
            out = np.zeros(self.offset + self.size)
        out[self.offset:self.offset + self.size] = values.T.ravel()
        return out


# ---------------------------------------------------------------- geometry

_REF_GRADS = {
    2: np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]),
    3: np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
}


def element_geometry(mesh: Mesh):
    """Basis gradients (nc, dim+1, dim) and signed volumes (nc,)."""
    x = mesh.vertices[mesh.cells]
    J = np.swapaxes(x[:, 1:, :] - x[:, :1, :], 1, 2)
    det = np.linalg.det(J)
    if np.any(det == 0):
        raise MeshError("degenerate cell")
    Jinv = np.linalg.inv(J)
    grads = np.einsum("ak,nkj->naj", _REF_GRADS[mesh.dim], Jinv)
    return grads, det / math.factorial(mesh.dim)


def jax_geometry(xe):
    """Single-element version of :func:`element_geometry` for use under vmap.

    Also returns the cell diameter (longest edge).
    """
    import jax
    import jax.numpy as jnp

    dim = xe.shape[1]
    J = (xe[1:, :] - xe[:1, :]).T
    det = jnp.linalg.det(J)
    grads = jnp.asarray(_REF_GRADS[dim]) @ jnp.linalg.inv(J)
    diffs = xe[:, None, :] - xe[None, :, :]
    iu = np.triu_indices(dim + 1, 1)
    sq = jnp.sum(diffs[iu] ** 2, axis=-1)
    # Edges tied (to roundoff) for longest share the derivative equally, which
    # is what a central difference across the kink of max() sees.  Mesh
    # generators produce many isosceles cells, so such ties are common.
    top = jax.lax.stop_gradient(jnp.max(sq))
    wts = jax.lax.stop_gradient((sq >= top * (1.0 - 1e-12)).astype(sq.dtype))
    return grads, det / math.factorial(dim), jnp.sqrt(jnp.sum(wts * sq) / jnp.sum(wts))


def safe_norm(v):
    """Euclidean norm with a zero (not NaN) derivative at the origin."""
    import jax.numpy as jnp

    s = jnp.sum(v * v)
    pos = s > 0
    return jnp.where(pos, jnp.sqrt(jnp.where(pos, s, 1.0)), 0.0)


# ---------------------------------------------------------------- assembly

def assemble_vector(dofmap: np.ndarray, local: np.ndarray, size: int) -> np.ndarray:
    """Scatter-add element vectors.  Summation order is fixed by the cell order."""
    return np.bincount(dofmap.ravel(), weights=np.asarray(local).ravel(), minlength=size)


def assemble_matrix(rows: np.ndarray, cols: np.ndarray, local: np.ndarray, shape) -> sp.csr_matrix:
    """Scatter-add element matrices ``local[e, i, j]`` into CSR."""
    n_r, n_c = rows.shape[1], cols.shape[1]
    R = np.repeat(rows, n_c, axis=1).ravel()
    C = np.tile(cols, (1, n_r)).ravel()
    A = sp.coo_matrix((np.asarray(local).ravel(), (R, C)), shape=shape).tocsr()
    A.sum_duplicates()
    return A


def mass_matrix(space: FunctionSpace, coefficient: float = 1.0) -> sp.csr_matrix:
    """P1 mass matrix; element entries are ``|K| (1 + delta_ab) / ((d+1)(d+2))``."""
    mesh = space.mesh
    _, vol = element_geometry(mesh)
    k = mesh.dim + 1
    ref = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
    local1 = coefficient * vol[:, None, None] * ref
    local = np.zeros((mesh.num_cells, k * space.value_dim, k * space.value_dim))
    for c in range(space.value_dim):
        local[:, c * k:(c + 1) * k, c * k:(c + 1) * k] = local1
    dm = space.dofmap()
    N = space.offset + space.size
    return assemble_matrix(dm, dm, local, (N, N))


def stiffness_matrix(space: FunctionSpace, coefficient: float = 1.0) -> sp.csr_matrix:
    """Componentwise Laplacian ``(coefficient * grad u, grad v)``."""
    mesh = space.mesh
    grads, vol = element_geometry(mesh)
    k = mesh.dim + 1
    local1 = coefficient * vol[:, None, None] * np.einsum("nai,nbi->nab", grads, grads)
    local = np.zeros((mesh.num_cells, k * space.value_dim, k * space.value_dim))
    for c in range(space.value_dim):
        local[:, c * k:(c + 1) * k, c * k:(c + 1) * k] = local1
    dm = space.dofmap()
    N = space.offset + space.size
    return assemble_matrix(dm, dm, local, (N, N))


def load_vector(space: FunctionSpace, f: Callable | float = 1.0) -> np.ndarray:
    """``(f, v)`` for scalar ``f`` given as a constant or a function of points."""
    mesh = space.mesh
    if space.value_dim != 1:
        raise ValueError("load_vector expects a scalar space")
    _, vol = element_geometry(mesh)
    lam, w = cell_quadrature(mesh.dim)
    xq = np.einsum("qa,nad->nqd", lam, mesh.vertices[mesh.cells])
    fq = np.broadcast_to(f(xq) if callable(f) else np.asarray(float(f)), xq.shape[:2])
    local = vol[:, None] * np.einsum("q,nq,qa->na", w, fq, lam)
    return assemble_vector(space.dofmap(), local, space.offset + space.size)


def elasticity_matrix(space: FunctionSpace) -> sp.csr_matrix:
    """``(grad g, grad v) + (div g, div v)`` on a vector P1 space."""
    mesh = space.mesh
    if space.value_dim != mesh.dim:
        raise ValueError("elasticity needs a vector space")
    grads, vol = element_geometry(mesh)
    d, k = mesh.dim, mesh.dim + 1
    lap = np.einsum("nai,nbi->nab", grads, grads)
    local = np.zeros((mesh.num_cells, d * k, d * k))
    for i in range(d):
        for j in range(d):
            blk = np.einsum("na,nb->nab", grads[:, :, i], grads[:, :, j])
            if i == j:
                blk = blk + lap
            local[:, i * k:(i + 1) * k, j * k:(j + 1) * k] = blk
    local *= vol[:, None, None]
    dm = space.dofmap()
    N = space.offset + space.size
    return assemble_matrix(dm, dm, local, (N, N))


# ---------------------------------------------------------------- Dirichlet

@dataclass(eq=False)
class DirichletBC:
    """Prescribed values on vertices of facets carrying any of ``tags``.

    ``value`` is a constant (scalar or per-component) or a callable mapping
    an (n, dim) point array to (n,) or (n, value_dim) values.
    """

    space: FunctionSpace
    tags: Sequence[int]
    value: float | Sequence[float] | Callable = 0.0
    components: Sequence[int] | None = None

    def vertices(self) -> np.ndarray:
        mesh = self.space.mesh
        missing = [t for t in self.tags if not mesh.has_tag(t)]
        if missing:
            raise MeshError(f"boundary tag(s) {missing} absent from mesh")
        return mesh.tag_vertices(self.tags)

    def dofs_values(self):
        verts = self.vertices()
        comps = list(range(self.space.value_dim)) if self.components is None else list(self.components)
        if callable(self.value):
            vals = np.asarray(self.value(self.space.mesh.vertices[verts]), dtype=float)
            vals = vals.reshape(len(verts), -1)
            if vals.shape[1] == 1 and self.space.value_dim > 1:
                vals = np.repeat(vals, self.space.value_dim, axis=1)
        else:
            vals = np.broadcast_to(np.asarray(self.value, dtype=float),
                                   (len(verts), self.space.value_dim))
        dofs = np.concatenate([self.space.dofs(verts, c) for c in comps])
        values = np.concatenate([vals[:, c] for c in comps])
        return dofs, values


def collect_dirichlet(bcs: Sequence[DirichletBC]):
    """Merge BCs into (dofs, values); later entries win on shared dofs."""
    table = {}
    for bc in bcs:
        d, v = bc.dofs_values()
        table.update(zip(d.tolist(), v.tolist()))
    dofs = np.array(sorted(table), dtype=np.int64)
    return dofs, np.array([table[i] for i in dofs.tolist()], dtype=float)


def apply_dirichlet(A, b, bcs, values=None):
    """Impose Dirichlet conditions by row replacement with column elimination.

    ``bcs`` is either a list of :class:`DirichletBC` or an index array, in
    which case ``values`` gives the prescribed values (default zero).
    Returns new ``(A, b)``; symmetric ``A`` stays symmetric.
    """
    if len(bcs) and isinstance(bcs[0], DirichletBC):
        dofs, values = collect_dirichlet(bcs)
    else:
        dofs = np.asarray(bcs, dtype=np.int64)
        values = np.zeros(len(dofs)) if values is None else np.asarray(values, dtype=float)
    A = sp.csr_matrix(A)
    n = A.shape[0]
    xd = np.zeros(n)
    xd[dofs] = values
    b = np.asarray(b, dtype=float) - A @ xd
    free = np.ones(n)
    free[dofs] = 0.0
    K = sp.diags(free)
    A = (K @ A @ K + sp.diags(1.0 - free)).tocsr()
    A.eliminate_zeros()
    b[dofs] = values
    return A, b


# ---------------------------------------------------------------- linear solve

@dataclass
class LinearSolverConfig:
    """``method`` is ``"direct"`` (sparse LU) or ``"gmres"``."""

    method: str = "direct"
    rtol: float = 1e-8
    max_iterations: int = 1000
    restart: int = 50
    preconditioner: str = "ilu"

    def __post_init__(self):
        if not 0.0 < self.rtol < 1.0:
            raise ValueError("rtol must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.method not in ("direct", "gmres"):
            raise ValueError(f"unknown linear method {self.method!r}")
        if self.preconditioner not in ("ilu", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class LinearSolveInfo:
    iterations: int
    residual: float


def solve_linear(A, b, cfg: LinearSolverConfig | None = None, return_info: bool = False):
    """Solve ``A x = b`` to ``||Ax - b|| <= rtol ||b||``.

    The residual is recomputed by explicit multiplication after the solve.
    """
    cfg = cfg or LinearSolverConfig()
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x, its = np.zeros_like(b), 0
    elif cfg.method == "direct":
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise LinearSolverError(f"sparse LU failed: {exc}") from exc
        x = lu.solve(b)
        its = 1
        r = b - A @ x
        if np.linalg.norm(r) > cfg.rtol * bnorm:
            x = x + lu.solve(r)  # one step of iterative refinement
            its = 2
    else:
        if cfg.preconditioner == "ilu":
            try:
                ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
            except RuntimeError as exc:
                raise LinearSolverError(f"incomplete LU failed: {exc}") from exc
            M = spla.LinearOperator(A.shape, ilu.solve)
        else:
            dg = A.diagonal()
            dg[dg == 0] = 1.0
            M = sp.diags(1.0 / dg)
        counter = []
        x, _ = spla.gmres(A, b, rtol=cfg.rtol, restart=cfg.restart, maxiter=cfg.max_iterations,
                          M=M, callback=counter.append, callback_type="pr_norm")
        its = len(counter)
    res = float(np.linalg.norm(A @ x - b) / bnorm) if bnorm else 0.0
    if not np.isfinite(res) or res > cfg.rtol:
        raise LinearSolverError(
            f"{cfg.method} solve did not converge: relative residual {res:.3e} > {cfg.rtol:.1e}",
            residual=res, iterations=its)
    if return_info:
        return x, LinearSolveInfo(its, res)
    return x


# ---------------------------------------------------------------- Newton

@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norms: list = field(default_factory=list)
    reference_norm: float = 1.0


def newton_solve(residual: Callable, jacobian: Callable, x0, rel_tol: float = 1e-5,
                 max_iter: int = 30, linear: LinearSolverConfig | None = None,
                 reference_norm: float | None = None, abs_tol: float = 0.0,
                 max_backtracks: int = 8) -> NewtonResult:
    """Damped Newton iteration for ``residual(x) = 0``.

    Converged when ``||R(x)|| <= max(rel_tol * ref, abs_tol)`` with ``ref``
    equal to ``reference_norm`` or ``||R(x0)||``.  A step is halved while the
    residual norm does not decrease, at most ``max_backtracks`` times.
    Krylov solves use a fixed tolerance of ``1e-2 * rel_tol``.
    """
    linear = linear or LinearSolverConfig()
    if linear.method != "direct":
        linear = LinearSolverConfig(**{**linear.__dict__, "rtol": min(linear.rtol, 1e-2 * rel_tol)})
    x = np.array(x0, dtype=float)
    r = residual(x)
    norm = float(np.linalg.norm(r))
    ref = norm if reference_norm is None else float(reference_norm)
    target = max(rel_tol * ref, abs_tol)
    trace = [norm]
    if not np.isfinite(norm):
        raise NewtonDivergence("non-finite initial residual")
    it = 0
    while norm > target:
        if it >= max_iter:
            raise NewtonMaxIterations(
                f"Newton: {max_iter} iterations, residual {norm:.3e} > target {target:.3e}")
        dx = solve_linear(jacobian(x), -r, linear)
        t = 1.0
        for _ in range(max_backtracks + 1):
            xn = x + t * dx
            rn = residual(xn)
            nn = float(np.linalg.norm(rn))
            if np.isfinite(nn) and nn < norm:
                break
            t *= 0.5
        else:
            raise NewtonDivergence(
                f"Newton: residual {norm:.3e} not reduced after {max_backtracks} halvings")
        x, r, norm = xn, rn, nn
        it += 1
        trace.append(norm)
        log.debug("newton it %d: |R| = %.3e (step %.3g)", it, norm, t)
    return NewtonResult(x, it, trace, ref)
