"""Broken polynomial spaces, Lagrange bases and quadrature on triangles/edges.

Reference triangle: vertices (0,0), (1,0), (0,1).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import ceil
from typing import NamedTuple

import numpy as np
from scipy.special import roots_jacobi

MAX_QUADRATURE_DEGREE = 40


class QuadratureRule(NamedTuple):
    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def triangle_quadrature(degree: int) -> QuadratureRule:
    """Collapsed (Stroud) Gauss rule on the reference triangle.

    Gauss-Legendre in one direction and Gauss-Jacobi(1, 0) in the collapsed
    one; exact for polynomials of total degree ``degree``.  Weights sum to 1/2.
    """
    degree = int(degree)
    if degree < 0 or degree > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} "
                         f"(0..{MAX_QUADRATURE_DEGREE})")
    n = max(1, ceil((degree + 1) / 2))
    xs, ws = np.polynomial.legendre.leggauss(n)
    xt, wt = roots_jacobi(n, 1.0, 0.0)
    s, t = (xs + 1) / 2, (xt + 1) / 2
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws / 2, wt / 4)
    pts = np.stack([(S * (1 - T)).ravel(), T.ravel()], axis=1)
    pts.setflags(write=False)
    w = W.ravel()
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


@lru_cache(maxsize=None)
def line_quadrature(degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]; weights sum to 1."""
    degree = int(degree)
    if degree < 0 or degree > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} "
                         f"(0..{MAX_QUADRATURE_DEGREE})")
    n = max(1, ceil((degree + 1) / 2))
    x, w = np.polynomial.legendre.leggauss(n)
    pts = ((x + 1) / 2)[:, None]
    pts.setflags(write=False)
    w = w / 2
    w.setflags(write=False)
    return QuadratureRule(pts, w, degree)


def quadrature(degree: int) -> tuple[QuadratureRule, QuadratureRule]:
    """Triangle and facet rules exact to ``degree``."""
    return triangle_quadrature(degree), line_quadrature(degree)


def dim_p(k: int) -> int:
    """Dimension of P_k on a triangle."""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


def _exponents(k):
    return [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]


def lattice_nodes(k: int) -> np.ndarray:
    """Equispaced Lagrange nodes of P_k (centroid for k = 0)."""
    if k == 0:
        return np.array([[1 / 3, 1 / 3]])
    return np.array([(i / k, j / k) for j in range(k + 1) for i in range(k + 1 - j)])


@lru_cache(maxsize=None)
def _coefficients(k):
    exps = _exponents(k)
    nodes = lattice_nodes(k)
    V = np.array([[x ** a * y ** b for a, b in exps] for x, y in nodes])
    return np.linalg.inv(V)


class BasisValues(NamedTuple):
    values: np.ndarray
    gradients: np.ndarray
    hessians: np.ndarray | None


def eval_basis(k: int, points, hessians: bool | None = None) -> BasisValues:
    """Nodal P_k basis on the reference triangle.

    Returns values ``(..., nb)``, gradients ``(..., nb, 2)`` and, for
    ``k >= 2`` (or when requested), hessians ``(..., nb, 2, 2)``.
    """
    pts = np.asarray(points, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    C = _coefficients(k)
    exps = _exponents(k)

    def pw(base, e):
        return base ** e if e > 0 else np.ones_like(base)

    mono = np.stack([pw(x, a) * pw(y, b) for a, b in exps], axis=-1)
    dx = np.stack([a * pw(x, a - 1) * pw(y, b) if a else np.zeros_like(x) for a, b in exps], -1)
    dy = np.stack([b * pw(x, a) * pw(y, b - 1) if b else np.zeros_like(x) for a, b in exps], -1)
    values = mono @ C
    grads = np.stack([dx @ C, dy @ C], axis=-1)
    hess = None
    if hessians or (hessians is None and k >= 2):
        z = np.zeros_like(x)
        dxx = np.stack([a * (a - 1) * pw(x, a - 2) * pw(y, b) if a > 1 else z for a, b in exps], -1)
        dxy = np.stack([a * b * pw(x, a - 1) * pw(y, b - 1) if a and b else z for a, b in exps], -1)
        dyy = np.stack([b * (b - 1) * pw(x, a) * pw(y, b - 2) if b > 1 else z for a, b in exps], -1)
        hxx, hxy, hyy = dxx @ C, dxy @ C, dyy @ C
        hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
    return BasisValues(values, grads, hess)


@dataclass(frozen=True)
class DgSpace:
    """Broken P_k^2 velocity / P_{k-1} pressure pair on a mesh.

    Velocity dofs of element ``e`` occupy ``[e*nu_loc, (e+1)*nu_loc)``, first
    all x-components then all y-components.  Pressure dofs of ``e`` occupy
    ``[e*np_loc, (e+1)*np_loc)``.
    """

    mesh: object
    k: int

    @property
    def nb(self) -> int:
        return dim_p(self.k)

    @property
    def nb_p(self) -> int:
        return dim_p(self.k - 1)

    @property
    def nu_loc(self) -> int:
        return 2 * self.nb

    @property
    def np_loc(self) -> int:
        return self.nb_p

    @property
    def n_u(self) -> int:
        return self.nu_loc * self.mesh.n_elements

    @property
    def n_p(self) -> int:
        return self.np_loc * self.mesh.n_elements

    @property
    def ndof(self) -> int:
        return self.n_u + self.n_p

    def u_dofs(self, elements) -> np.ndarray:
        e = np.asarray(elements)
        return e[..., None] * self.nu_loc + np.arange(self.nu_loc)

    def p_dofs(self, elements) -> np.ndarray:
        e = np.asarray(elements)
        return e[..., None] * self.np_loc + np.arange(self.np_loc)

    @property
    def quadrature_degree(self) -> int:
        return 2 * self.k + 2


def build_space(mesh, k: int) -> DgSpace:
    if int(k) != k or k < 1:
        raise ValueError(f"polynomial degree k must be an integer >= 1, got {k!r}")
    if k > 3:
        raise ValueError(f"k={k} not supported (1..3)")
    return DgSpace(mesh, int(k))


# --- geometry helpers shared by assembly and estimation ---------------------

def to_physical(mesh, elements, ref_points) -> np.ndarray:
    """Map reference points ((nq, 2) shared or (ne, nq, 2)) of ``elements`` to physical space."""
    elements = np.asarray(elements)
    v0 = mesh.vertices[mesh.triangles[elements, 0]]
    J = mesh.jacobians[elements]
    ref = np.broadcast_to(ref_points, (len(elements),) + np.shape(ref_points)[-2:])
    return v0[:, None, :] + np.einsum("eab,eqb->eqa", J, ref)


def facet_reference_points(mesh, facets, side: int, s) -> np.ndarray:
    """Reference coordinates in element ``elements[f, side]`` of facet points.

    ``s`` holds parameters in [0, 1] along the facet from its first vertex to
    its second.  Returns (nf, nq, 2).
    """
    F = mesh.facets
    e = F.elements[facets, side]
    a = mesh.vertices[F.vertices[facets, 0]]
    b = mesh.vertices[F.vertices[facets, 1]]
    s = np.asarray(s, dtype=float).reshape(-1)
    x = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    v0 = mesh.vertices[mesh.triangles[e, 0]]
    Jinv = mesh.inverse_jacobians[e]
    return np.einsum("fab,fqb->fqa", Jinv, x - v0[:, None, :])


def physical_gradients(ref_grads, Jinv) -> np.ndarray:
    """Map reference gradients (e, q, nb, 2) with per-element J^{-1} (e, 2, 2)."""
    return np.einsum("eqib,eba->eqia", ref_grads, Jinv)


def physical_hessians(ref_hess, Jinv) -> np.ndarray:
    return np.einsum("eqibc,eba,ecd->eqiad", ref_hess, Jinv, Jinv)


class VectorBasis(NamedTuple):
    """Vector-valued velocity basis ``psi_I = phi_i e_c`` (``I = c*nb + i``).

    ``values (..., 2nb, 2)``, ``grads (..., 2nb, 2, 2)`` with
    ``grads[..., I, a, b] = d_b psi_I,a``, ``strain`` its symmetric part and
    ``div`` its trace.
    """

    values: np.ndarray
    grads: np.ndarray
    strain: np.ndarray
    div: np.ndarray


def vector_basis(phi, dphi) -> VectorBasis:
    nb = phi.shape[-1]
    lead = phi.shape[:-1]
    V = np.zeros(lead + (2 * nb, 2))
    V[..., :nb, 0] = phi
    V[..., nb:, 1] = phi
    G = np.zeros(lead + (2 * nb, 2, 2))
    G[..., :nb, 0, :] = dphi
    G[..., nb:, 1, :] = dphi
    S = 0.5 * (G + np.swapaxes(G, -1, -2))
    return VectorBasis(V, G, S, G[..., 0, 0] + G[..., 1, 1])


class Trace(NamedTuple):
    """Basis data of one side of a set of facets at facet quadrature points."""

    elements: np.ndarray
    u: VectorBasis
    p: np.ndarray
    hess: np.ndarray | None


def element_basis(space: DgSpace, elements, ref_points, hessians=False):
    """Velocity basis, pressure basis and (optionally) physical hessians at
    shared reference points for the given elements."""
    mesh = space.mesh
    b = eval_basis(space.k, ref_points, hessians=hessians)
    Jinv = mesh.inverse_jacobians[elements]
    nq = len(ref_points)
    ref_grads = np.broadcast_to(b.gradients, (len(elements),) + b.gradients.shape)
    dphi = physical_gradients(ref_grads, Jinv)
    phi = np.broadcast_to(b.values, (len(elements), nq, space.nb))
    hess = None
    if hessians:
        ref_h = np.broadcast_to(b.hessians, (len(elements),) + b.hessians.shape)
        hess = physical_hessians(ref_h, Jinv)
    pv = np.broadcast_to(eval_basis(space.k - 1, ref_points, hessians=False).values,
                         (len(elements), nq, space.nb_p))
    return vector_basis(phi, dphi), pv, hess


def facet_trace(space: DgSpace, facets, side: int, s, hessians=False) -> Trace:
    mesh = space.mesh
    e = mesh.facets.elements[facets, side]
    ref = facet_reference_points(mesh, facets, side, s)
    b = eval_basis(space.k, ref, hessians=hessians)
    Jinv = mesh.inverse_jacobians[e]
    dphi = physical_gradients(b.gradients, Jinv)
    hess = physical_hessians(b.hessians, Jinv) if hessians else None
    pv = eval_basis(space.k - 1, ref, hessians=False).values
    return Trace(e, vector_basis(b.values, dphi), pv, hess)
