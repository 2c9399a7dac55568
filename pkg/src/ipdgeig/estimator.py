"""Residual a posteriori indicators, marking and the adaptive loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import _chunks, assemble_system, facet_mu
from .eigensolver import EigenSolverError, solve_evp
from .materials import MaterialTable, unscale_eigenvalue
from .mesh import DIRICHLET, INTERIOR, NEUMANN, Mesh, refine
from .spaces import (DgSpace, build_space, element_basis, eval_basis, facet_trace,
                     line_quadrature, physical_gradients, triangle_quadrature)


@dataclass
class IndicatorField:
    """Per-element squared indicator contributions.

    ``eta_R``, ``eta_F``, ``eta_J`` and ``theta`` are the (non-squared) local
    quantities; ``facet_F`` and ``facet_J`` keep the squared contribution of
    each facet to one incident element.
    """

    eta_R: np.ndarray
    eta_F: np.ndarray
    eta_J: np.ndarray
    theta: np.ndarray
    facet_F: np.ndarray = field(default=None, repr=False)
    facet_J: np.ndarray = field(default=None, repr=False)

    @property
    def eta_K_sq(self) -> np.ndarray:
        return self.eta_R ** 2 + self.eta_F ** 2 + self.eta_J ** 2

    @property
    def eta_K(self) -> np.ndarray:
        return np.sqrt(self.eta_K_sq)

    @property
    def eta_sq(self) -> float:
        return float(self.eta_K_sq.sum())

    @property
    def eta(self) -> float:
        return float(np.sqrt(self.eta_sq))

    @property
    def Theta(self) -> float:
        return float(np.sqrt((self.theta ** 2).sum()))

    def __len__(self):
        return len(self.eta_R)


def _real(x):
    return np.real(np.asarray(x))


def _volume_terms(space, rule, els, kappa, U, P, mu, inv_lam, rho):
    """Squared element residual and data oscillation on a chunk of elements.

    Materials are constant per element, so the projected ``mu_h`` equals
    ``mu`` and the oscillation vanishes identically.
    """
    mesh = space.mesh
    V, Pb, hess = element_basis(space, els, rule.points, hessians=True)
    w = 2.0 * mesh.areas[els][:, None] * rule.weights[None, :]
    uq = np.einsum("eqia,ei->eqa", V.values, U)
    div = np.einsum("eqi,ei->eq", V.div, U)
    pq = np.einsum("eqj,ej->eq", Pb, P)
    nb = space.nb
    Hx = np.einsum("eqicd,ei->eqcd", hess, U[:, :nb])
    Hy = np.einsum("eqicd,ei->eqcd", hess, U[:, nb:])
    # div(eps(u))_a = 1/2 sum_b (d_bb u_a + d_ab u_b)
    div_eps = 0.5 * np.stack([2 * Hx[..., 0, 0] + Hx[..., 1, 1] + Hy[..., 0, 1],
                              Hy[..., 0, 0] + 2 * Hy[..., 1, 1] + Hx[..., 1, 0]], -1)
    if space.k >= 2:
        bp = eval_basis(space.k - 1, rule.points, hessians=False)
        dP = physical_gradients(np.broadcast_to(bp.gradients, (len(els),) + bp.gradients.shape),
                                mesh.inverse_jacobians[els])
        grad_p = np.einsum("eqja,ej->eqa", dP, P)
    else:
        grad_p = np.zeros_like(uq)
    r1 = kappa * rho[:, None, None] * uq + 2.0 * mu[:, None, None] * div_eps - grad_p
    r2 = div + inv_lam[:, None] * pq
    eta_sq = (mesh.h[els] ** 2 / (2.0 * mu)) * np.einsum("eq,eqa,eqa->e", w, r1, r1) \
        + np.einsum("eq,eq,eq->e", w, r2, r2) / (1.0 / (2.0 * mu) + inv_lam)
    return eta_sq, np.zeros(len(els))


def local_indicators(space: DgSpace, materials: MaterialTable, kappa, u, p,
                     a_S: float) -> IndicatorField:
    """Residual indicators of a discrete eigenpair ``(kappa, u, p)`` on ``space``.

    Real parts are used for complex (non-symmetric) eigenpairs.  The volume
    residual carries the density, ``kappa rho u + div(2 mu eps(u)) - grad p``,
    matching the density-weighted mass matrix.
    """
    mesh = space.mesh
    u = _real(u)
    p = _real(p)
    kappa = float(np.real(kappa))
    if u.shape != (space.n_u,) or p.shape != (space.n_p,):
        raise ValueError(f"eigenvector sizes {u.shape}, {p.shape} do not match the space "
                         f"({space.n_u}, {space.n_p})")
    ne = mesh.n_elements
    U = u.reshape(ne, space.nu_loc)
    P = p.reshape(ne, space.np_loc)
    mu_h = materials.mu(mesh.materials)
    inv_lam = materials.inv_lambda(mesh.materials)
    rho = materials.rho(mesh.materials)
    rule = triangle_quadrature(space.quadrature_degree)
    eta_R_sq = np.zeros(ne)
    theta_sq = np.zeros(ne)
    for els in _chunks(ne):
        eta_R_sq[els], theta_sq[els] = _volume_terms(space, rule, els, kappa, U[els], P[els],
                                                     mu_h[els], inv_lam[els], rho[els])

    F = mesh.facets
    line = line_quadrature(space.quadrature_degree)
    s = line.points[:, 0]
    facet_F = np.zeros((mesh.n_facets, 2))
    facet_J = np.zeros((mesh.n_facets, 2))

    def traces(f, side):
        tr = facet_trace(space, f, side, s)
        e = tr.elements
        val = np.einsum("fqia,fi->fqa", tr.u.values, U[e])
        strain = np.einsum("fqiab,fi->fqab", tr.u.strain, U[e])
        pr = np.einsum("fqj,fj->fq", tr.p, P[e])
        stress_n = pr[..., None] * F.normals[f][:, None, :] \
            - 2.0 * mu_h[e][:, None, None] * np.einsum("fqab,fb->fqa", strain, F.normals[f])
        return val, stress_n

    fi = np.flatnonzero(F.tags == INTERIOR)
    if len(fi):
        w_f = F.h[fi][:, None] * line.weights[None, :]
        v0, t0 = traces(fi, 0)
        v1, t1 = traces(fi, 1)
        mu_f = facet_mu(mesh, materials, fi)
        jt = t0 - t1
        ju = v0 - v1
        cF = F.h[fi] / (2.0 * mu_f) * np.einsum("fq,fqa,fqa->f", w_f, jt, jt)
        cJ = 2.0 * mu_f * a_S / F.h[fi] * np.einsum("fq,fqa,fqa->f", w_f, ju, ju)
        facet_F[fi] = cF[:, None]
        facet_J[fi] = cJ[:, None]
    for tag in (NEUMANN, DIRICHLET):
        fb = np.flatnonzero(F.tags == tag)
        if not len(fb):
            continue
        w_f = F.h[fb][:, None] * line.weights[None, :]
        v0, t0 = traces(fb, 0)
        mu_e = mu_h[F.elements[fb, 0]]
        if tag == NEUMANN:
            facet_F[fb, 0] = F.h[fb] / (2.0 * mu_e) * np.einsum("fq,fqa,fqa->f", w_f, t0, t0)
        else:
            # |u (x) n| = |u| for a unit normal
            facet_J[fb, 0] = 2.0 * mu_e * a_S / F.h[fb] * np.einsum("fq,fqa,fqa->f",
                                                                      w_f, v0, v0)

    eta_F_sq = np.zeros(ne)
    eta_J_sq = np.zeros(ne)
    for side in (0, 1):
        has = F.elements[:, side] >= 0
        np.add.at(eta_F_sq, F.elements[has, side], facet_F[has, side])
        np.add.at(eta_J_sq, F.elements[has, side], facet_J[has, side])
    return IndicatorField(np.sqrt(eta_R_sq), np.sqrt(eta_F_sq), np.sqrt(eta_J_sq),
                          np.sqrt(theta_sq), facet_F, facet_J)


def effectivity(err: float, eta: float) -> float:
    """``err / eta**2``."""
    if err < 0:
        raise ValueError("error must be non-negative")
    if eta < 0:
        raise ValueError("estimator must be non-negative")
    if eta == 0:
        if err == 0:
            return 0.0
        raise ValueError("estimator is zero while the error is not")
    return err / eta ** 2


def mark(field_or_values, theta: float = 0.5) -> np.ndarray:
    """Ids of elements with ``eta_K >= theta * max eta_K``."""
    if not 0 < theta <= 1:
        raise ValueError(f"marking parameter must lie in (0, 1], got {theta}")
    eta = field_or_values.eta_K if isinstance(field_or_values, IndicatorField) \
        else np.asarray(field_or_values, dtype=float)
    if eta.size == 0:
        raise ValueError("empty indicator field")
    top = eta.max()
    if top <= 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(eta >= theta * top)


@dataclass
class AdaptiveRecord:
    iteration: int
    dof: int
    n_elements: int
    h_max: float
    kappa_hat: np.ndarray
    frequency: np.ndarray
    err: np.ndarray | None
    eta: float
    eta_sq: float
    theta_osc: float
    eff: float | None
    seconds: float
    min_angle: float = np.nan


def adaptive_loop(mesh: Mesh, materials: MaterialTable, k: int = 1, iterations: int = 15,
                  mode: int = 0, a: float = 10.0, epsilon: int = 1, theta: float = 0.5,
                  m: int = 1, reference=None, backend: str = "auto", shift=None,
                  tol: float = 1e-8, seed: int = 0, callback=None, uniform: bool = False,
                  bisec3: bool = False):
    """Solve, estimate, mark, refine.

    Returns one :class:`AdaptiveRecord` per solve (``iterations + 1`` of them).
    ``reference`` holds unscaled eigenvalues kappa_hat for the first ``m``
    modes (or ``None``); the estimator is computed for mode ``mode``.  With
    ``uniform=True`` every element is refined (a uniform-refinement study).
    ``bisec3`` splits every edge of a marked element (four children), the
    bisection analogue of red refinement.
    On solver failure an :class:`EigenSolverError` is raised whose
    ``partial`` attribute carries the records gathered so far.
    """
    m = max(m, mode + 1)
    a_S = a * k ** 2
    records = []
    if reference is not None:
        reference = np.atleast_1d(np.asarray(reference, dtype=float))
    for it in range(iterations + 1):
        t0 = time.perf_counter()
        space = build_space(mesh, k)
        system = assemble_system(space, materials, a=a, epsilon=epsilon)
        try:
            res = solve_evp(system, m, backend=backend, shift=shift, tol=tol, seed=seed)
        except EigenSolverError as exc:
            raise EigenSolverError(f"iteration {it}: {exc}", partial=records) from exc
        pair = res[mode]
        ind = local_indicators(space, materials, pair.kappa, pair.u, pair.p, a_S)
        kh, freq = unscale_eigenvalue(res.kappas, materials.nu)
        kh = np.atleast_1d(kh)
        err = eff = None
        if reference is not None:
            nref = min(len(reference), len(kh))
            err = np.abs(np.real(kh[:nref]) - reference[:nref])
            if mode < nref:
                eff = effectivity(float(err[mode]), ind.eta)
        rec = AdaptiveRecord(it, space.ndof, mesh.n_elements, mesh.h_max, kh,
                             np.atleast_1d(freq), err, ind.eta, ind.eta_sq, ind.Theta, eff,
                             time.perf_counter() - t0, mesh.shape_regularity().min_angle)
        records.append(rec)
        if callback is not None:
            callback(rec)
        if it == iterations:
            break
        marked = np.arange(mesh.n_elements) if uniform else mark(ind, theta)
        if len(marked) == 0:
            break
        mesh = refine(mesh, marked, bisec3)
    return records
