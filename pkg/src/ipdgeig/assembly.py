"""Sparse blocks of the interior penalty DG discretization.

The discrete problem is

    [A  B^T] [u]         [M 0] [u]
    [B  -C ] [p] = kappa [0 0] [p]

with ``A`` the interior penalty form (``epsilon`` = 1 SIP, 0 IIP, -1 NIP),
``B`` the broken divergence with normal-jump facet terms, ``C`` the
``1/lambda`` pressure mass and ``M`` the density-weighted velocity mass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .materials import MaterialTable
from .mesh import DIRICHLET, INTERIOR
from .spaces import DgSpace, element_basis, facet_trace, line_quadrature, triangle_quadrature

CHUNK = 4096


class _Triplets:
    """COO accumulator; duplicates are summed on conversion."""

    def __init__(self, shape):
        self.shape = shape
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, blocks):
        r = np.broadcast_to(rows[:, :, None], blocks.shape)
        c = np.broadcast_to(cols[:, None, :], blocks.shape)
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(blocks.ravel())

    def tocsr(self):
        if not self.vals:
            return sp.csr_matrix(self.shape)
        m = sp.coo_matrix((np.concatenate(self.vals),
                           (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=self.shape).tocsr()
        m.sum_duplicates()
        return m


def _chunks(n):
    for start in range(0, n, CHUNK):
        yield np.arange(start, min(n, start + CHUNK))


def _element_weights(space, elements, rule):
    det = 2.0 * space.mesh.areas[elements]
    return det[:, None] * rule.weights[None, :]


def facet_mu(mesh, materials, facets):
    """Single-valued mu on facets: harmonic mean across interior facets,
    the element value on boundary facets."""
    F = mesh.facets
    e0 = F.elements[facets, 0]
    e1 = F.elements[facets, 1]
    mu0 = materials.mu(mesh.materials[e0])
    interior = e1 >= 0
    mu1 = np.where(interior, materials.mu(mesh.materials[np.where(interior, e1, e0)]), mu0)
    return 2.0 * mu0 * mu1 / (mu0 + mu1)


def penalty_facets(mesh):
    """Indices of facets in F_h^0 and F_h^D."""
    tags = mesh.facets.tags
    return np.flatnonzero(tags == INTERIOR), np.flatnonzero(tags == DIRICHLET)


def _check_epsilon(epsilon):
    if epsilon not in (-1, 0, 1):
        raise ValueError(f"epsilon must be -1 (NIP), 0 (IIP) or 1 (SIP), got {epsilon!r}")
    return int(epsilon)


def assemble_a(space: DgSpace, materials: MaterialTable, a_S: float,
               epsilon: int = 1) -> sp.csr_matrix:
    """Interior penalty stiffness matrix, ``A[i, j] = a_h(psi_j, psi_i)``."""
    epsilon = _check_epsilon(epsilon)
    if not a_S > 0:
        raise ValueError(f"stabilization parameter must be positive, got a_S={a_S}")
    mesh = space.mesh
    trip = _Triplets((space.n_u, space.n_u))
    rule = triangle_quadrature(space.quadrature_degree)
    for els in _chunks(mesh.n_elements):
        U, _, _ = element_basis(space, els, rule.points)
        w = _element_weights(space, els, rule) * (2.0 * materials.mu(mesh.materials[els]))[:, None]
        blocks = np.einsum("eq,eqiab,eqjab->eij", w, U.strain, U.strain, optimize=True)
        dofs = space.u_dofs(els)
        trip.add(dofs, dofs, blocks)

    line = line_quadrature(space.quadrature_degree)
    F = mesh.facets
    interior, dirichlet = penalty_facets(mesh)
    for facets, sides in ((interior, (0, 1)), (dirichlet, (0,))):
        for fs in _chunks(len(facets)):
            f = facets[fs]
            avg = 0.5 if len(sides) == 2 else 1.0
            n = F.normals[f]
            w = F.h[f][:, None] * line.weights[None, :]
            pen = a_S / F.h[f] * 2.0 * facet_mu(mesh, materials, f)
            tr = [facet_trace(space, f, s, line.points[:, 0]) for s in sides]
            sign = (1.0, -1.0)
            mu2 = [2.0 * materials.mu(mesh.materials[t.elements]) for t in tr]
            traction = [np.einsum("fqiab,fb->fqia", t.u.strain, n) for t in tr]
            for s, ts in enumerate(tr):
                for t, tt in enumerate(tr):
                    vv = np.einsum("fq,fqia,fqja->fij", w, ts.u.values, tt.u.values)
                    cons = np.einsum("fq,fqja,fqia->fij", w, traction[t], ts.u.values)
                    symm = np.einsum("fq,fqia,fqja->fij", w, traction[s], tt.u.values)
                    blocks = (pen * sign[s] * sign[t])[:, None, None] * vv \
                        - (avg * mu2[t] * sign[s])[:, None, None] * cons \
                        - epsilon * (avg * mu2[s] * sign[t])[:, None, None] * symm
                    trip.add(space.u_dofs(ts.elements), space.u_dofs(tt.elements), blocks)
    return trip.tocsr()


def assemble_b(space: DgSpace) -> sp.csr_matrix:
    """``B[j, i] = b_h(psi_i, q_j)`` (pressure rows, velocity columns)."""
    mesh = space.mesh
    trip = _Triplets((space.n_p, space.n_u))
    rule = triangle_quadrature(space.quadrature_degree)
    for els in _chunks(mesh.n_elements):
        U, P, _ = element_basis(space, els, rule.points)
        w = _element_weights(space, els, rule)
        blocks = -np.einsum("eq,eqj,eqi->eji", w, P, U.div)
        trip.add(space.p_dofs(els), space.u_dofs(els), blocks)

    line = line_quadrature(space.quadrature_degree)
    F = mesh.facets
    interior, dirichlet = penalty_facets(mesh)
    for facets, sides in ((interior, (0, 1)), (dirichlet, (0,))):
        for fs in _chunks(len(facets)):
            f = facets[fs]
            avg = 0.5 if len(sides) == 2 else 1.0
            n = F.normals[f]
            w = F.h[f][:, None] * line.weights[None, :]
            tr = [facet_trace(space, f, s, line.points[:, 0]) for s in sides]
            sign = (1.0, -1.0)
            for s, ts in enumerate(tr):
                vn = np.einsum("fqia,fa->fqi", ts.u.values, n)
                for tt in tr:
                    blocks = avg * sign[s] * np.einsum("fq,fqj,fqi->fji", w, tt.p, vn)
                    trip.add(space.p_dofs(tt.elements), space.u_dofs(ts.elements), blocks)
    return trip.tocsr()


def _pressure_mass(space, weight):
    mesh = space.mesh
    trip = _Triplets((space.n_p, space.n_p))
    rule = triangle_quadrature(space.quadrature_degree)
    for els in _chunks(mesh.n_elements):
        _, P, _ = element_basis(space, els, rule.points)
        w = _element_weights(space, els, rule) * weight[els][:, None]
        blocks = np.einsum("eq,eqi,eqj->eij", w, P, P)
        dofs = space.p_dofs(els)
        trip.add(dofs, dofs, blocks)
    return trip.tocsr()


def assemble_c(space: DgSpace, materials: MaterialTable) -> sp.csr_matrix:
    """Pressure mass weighted by ``1/lambda``; exactly zero when nu = 1/2."""
    inv_lam = materials.inv_lambda(space.mesh.materials)
    if not np.any(inv_lam):
        return sp.csr_matrix((space.n_p, space.n_p))
    return _pressure_mass(space, inv_lam)


def assemble_mass(space: DgSpace, materials: MaterialTable) -> sp.csr_matrix:
    """Velocity mass matrix weighted by the density."""
    mesh = space.mesh
    rho = materials.rho(mesh.materials)
    trip = _Triplets((space.n_u, space.n_u))
    rule = triangle_quadrature(space.quadrature_degree)
    for els in _chunks(mesh.n_elements):
        U, _, _ = element_basis(space, els, rule.points)
        w = _element_weights(space, els, rule) * rho[els][:, None]
        blocks = np.einsum("eq,eqia,eqja->eij", w, U.values, U.values)
        dofs = space.u_dofs(els)
        trip.add(dofs, dofs, blocks)
    return trip.tocsr()


@dataclass
class BlockSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    M: sp.csr_matrix
    space: DgSpace
    materials: MaterialTable
    a_S: float
    epsilon: int
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.space.k

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.C.shape[0]

    @property
    def symmetric(self) -> bool:
        return self.epsilon == 1

    def K(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, self.B.T], [self.B, -self.C]], format="csr")

    def M_hat(self) -> sp.csr_matrix:
        return sp.block_diag([self.M, sp.csr_matrix((self.n_p, self.n_p))], format="csr")


def assemble_system(space: DgSpace, materials: MaterialTable, a: float = 10.0,
                    epsilon: int = 1, a_S: float | None = None) -> BlockSystem:
    """All four blocks; the penalty defaults to ``a_S = a k^2``."""
    if a_S is None:
        a_S = a * space.k ** 2
    epsilon = _check_epsilon(epsilon)
    return BlockSystem(assemble_a(space, materials, a_S, epsilon), assemble_b(space),
                       assemble_c(space, materials), assemble_mass(space, materials),
                       space, materials, float(a_S), epsilon,
                       meta={"k": space.k, "epsilon": epsilon, "a_S": float(a_S),
                             "materials": sorted(materials.entries)})


def dump_coo(matrix, path) -> None:
    """Write ``row col value`` lines (17 significant digits)."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(m.row, m.col, m.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def load_coo(path, shape) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=shape).tocsr()
