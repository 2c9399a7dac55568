"""Generalized eigensolvers for the mixed pencil ``(K, M_hat)``.

``M_hat`` is singular (zero pressure block), so the pencil carries ``n_p``
infinite eigenvalues.  Both backends return only finite eigenvalues.

* ``dense``: when ``C`` is invertible the pressure is eliminated exactly,
  ``(A + B^T C^{-1} B) u = kappa M u``, and the reduced pencil is solved with
  LAPACK (symmetric-definite driver for SIP, QZ otherwise).  With ``C = 0`` the
  full pencil goes through QZ.
* ``shift_invert``: sparse LU of ``K - sigma M_hat`` and an Arnoldi process
  without restarts on ``u -> [(K - sigma M_hat)^{-1} (M u, 0)]_u``.  Ritz values
  ``theta`` map back through ``kappa = sigma + 1/theta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 1000
THETA_CUTOFF = 1e-10
IMAG_TOL = 1e-10
# eigenvalues with real part at or below this are discarded
POSITIVE_CUTOFF = 0.0


class EigenSolverError(RuntimeError):
    """Eigensolver failure; ``partial`` holds whatever converged."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


@dataclass
class EigenPair:
    kappa: complex | float
    u: np.ndarray
    p: np.ndarray
    residual: float = np.nan


@dataclass
class EigenResult:
    pairs: list
    shift: float | None = None
    backend: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def kappas(self) -> np.ndarray:
        return np.array([p.kappa for p in self.pairs])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([p.residual for p in self.pairs])

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


def spectral_transform_map(theta, shift: float):
    """``kappa = shift + 1/theta`` for a shift-invert Ritz value ``theta``."""
    theta = np.asarray(theta)
    if np.any(theta == 0):
        raise ValueError("theta = 0 corresponds to an infinite eigenvalue")
    return (shift + 1.0 / theta)[()]


def inverse_spectral_map(kappa, shift: float):
    return (1.0 / (np.asarray(kappa) - shift))[()]


def _order(kappas):
    return np.lexsort((np.imag(kappas), np.real(kappas)))


def _normalize(u, p, M):
    nrm = np.sqrt(abs(np.vdot(u, M @ u)))
    if nrm == 0:
        return u, p
    u, p = u / nrm, p / nrm
    # fix the phase so the largest velocity entry is real positive
    j = np.argmax(np.abs(u))
    ph = np.abs(u[j]) / u[j] if u[j] != 0 else 1.0
    u, p = u * ph, p * ph
    if np.allclose(np.imag(u), 0) and np.allclose(np.imag(p), 0):
        u, p = np.real(u), np.real(p)
    return u, p


def residual_norm(system, kappa, u, p, K=None, Mh=None, scale=None) -> float:
    """Normalized backward error ``|K z - kappa M z| / ((|K| + |kappa| |M|) |z|)``."""
    K = system.K() if K is None else K
    Mh = system.M_hat() if Mh is None else Mh
    z = np.concatenate([u, p])
    r = K @ z - kappa * (Mh @ z)
    if scale is None:
        scale = spla.norm(K, 1), spla.norm(Mh, 1)
    return float(np.linalg.norm(r) / ((scale[0] + abs(kappa) * scale[1]) * np.linalg.norm(z)))


def default_shift(system) -> float:
    """Zero: the wanted eigenvalues are the smallest positive ones, and
    ``K`` itself is nonsingular for well-posed problems."""
    return 0.0


def _dense(system, m):
    A, B, C, M = (x.toarray() for x in (system.A, system.B, system.C, system.M))
    n_u = A.shape[0]
    if C.size == 0 or np.all(np.diag(C) > 0):
        Cf = sla.cho_factor(C) if C.size else None
        As = A + B.T @ sla.cho_solve(Cf, B) if C.size else A
        if system.symmetric:
            w, V = sla.eigh(0.5 * (As + As.T), M, subset_by_value=[POSITIVE_CUTOFF, np.inf])
            w, V = w[:m], V[:, :m]
        else:
            w, V = sla.eig(As, M)
            keep = np.isfinite(w)
            w, V = w[keep], V[:, keep]
        P = sla.cho_solve(Cf, B @ V) if C.size else np.zeros((0, len(w)))
        return w, V, P, "dense-reduced"

    K = np.block([[A, B.T], [B, -C]])
    Mh = np.zeros_like(K)
    Mh[:n_u, :n_u] = M
    (alpha, beta), Z = sla.eig(K, Mh, homogeneous_eigvals=True)
    finite = np.abs(beta) > 1e-12 * np.abs(alpha)
    w = alpha[finite] / beta[finite]
    Z = Z[:, finite]
    return w, Z[:n_u], Z[n_u:], "dense-qz"


def pressure_scale(system) -> float:
    """Factor ``s`` with ``p = s p~`` that brings ``B`` and ``C`` to the size of ``A``.

    ``A`` grows like E while ``B`` is O(1) and ``C`` like 1/E; without the
    rescaling the sparse LU pivots badly for physical moduli.
    """
    nb = spla.norm(system.B, 1) if system.B.nnz else 0.0
    if nb == 0:
        return 1.0
    return float(spla.norm(system.A, 1) / nb)


def _shift_invert(system, m, shift, tol, maxdim, seed):
    K = system.K().tocsc()
    Mh = system.M_hat()
    M = system.M
    n_u = system.n_u
    ps = pressure_scale(system)
    D = sp.diags(np.concatenate([np.ones(n_u), np.full(system.n_p, ps)]))
    try:
        lu = spla.splu((D @ (K - shift * Mh) @ D).tocsc())
    except RuntimeError as exc:
        raise EigenSolverError(f"factorization of K - {shift:g} M_hat failed ({exc}); "
                               "the shift may be an eigenvalue, try a different shift") from exc

    dvec = D.diagonal()

    def op(u):
        # (K - sigma M_hat)^{-1} = D (D (K - sigma M_hat) D)^{-1} D, and D = I on u
        rhs = np.zeros(K.shape[0], dtype=u.dtype)
        rhs[:n_u] = M @ u
        if np.iscomplexobj(rhs):
            return dvec * (lu.solve(rhs.real) + 1j * lu.solve(rhs.imag))
        return dvec * lu.solve(rhs)

    scale = spla.norm(K, 1), spla.norm(Mh, 1)
    step = max(2 * m + 10, 30)
    maxdim = min(maxdim or 40 * step, n_u)
    Q = np.zeros((n_u, maxdim + 1))
    H = np.zeros((maxdim + 1, maxdim))
    q = op(np.random.default_rng(seed).standard_normal(n_u))[:n_u]
    Q[:, 0] = q / np.linalg.norm(q)
    j = 0
    pairs = []
    while True:
        target = min(j + step, maxdim)
        breakdown = False
        while j < target:
            w = op(Q[:, j])[:n_u]
            for _ in range(2):  # classical Gram-Schmidt with reorthogonalization
                h = Q[:, :j + 1].T @ w
                w -= Q[:, :j + 1] @ h
                H[:j + 1, j] += h
            beta = np.linalg.norm(w)
            H[j + 1, j] = beta
            j += 1
            if beta <= 1e-14 * np.linalg.norm(H[:j, j - 1]):
                breakdown = True
                break
            Q[:, j] = w / beta
        theta, Y = sla.eig(H[:j, :j])
        live = np.abs(theta) > THETA_CUTOFF * np.abs(theta).max()
        theta, Y = theta[live], Y[:, live]
        kappa = shift + 1.0 / theta
        pairs = []
        for i in np.argsort(-np.abs(theta)):
            if np.real(kappa[i]) <= POSITIVE_CUTOFF:
                continue
            z = op(Q[:, :j] @ Y[:, i])
            u, p = _normalize(z[:n_u], z[n_u:], M)
            pairs.append(EigenPair(kappa[i], u, p,
                                   residual_norm(system, kappa[i], u, p, K, Mh, scale)))
            if len(pairs) == m:
                break
        pairs.sort(key=lambda pr: (np.real(pr.kappa), np.imag(pr.kappa)))
        if len(pairs) == m and all(pr.residual <= tol for pr in pairs):
            return pairs, j
        if breakdown or j >= maxdim:
            break
    raise EigenSolverError(
        f"shift-invert Arnoldi did not reach residual {tol:g} for {m} pairs "
        f"(subspace dimension {j})", partial=pairs)


def solve_evp(system, m: int = 10, backend: str = "auto", shift: float | None = None,
              tol: float = 1e-8, seed: int = 0, maxdim: int | None = None) -> EigenResult:
    """The ``m`` finite eigenpairs with smallest real part.

    Pairs are sorted by real part (ties by imaginary part), eigenvectors are
    normalized to unit ``M``-norm and eigenvalues of the symmetric method are
    returned as real numbers.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    ndof = system.n_u + system.n_p
    if backend == "auto":
        backend = "dense" if ndof <= DENSE_LIMIT else "shift_invert"
    if backend == "dense":
        w, U, P, how = _dense(system, m)
        pos = np.real(w) > POSITIVE_CUTOFF
        w, U, P = w[pos], U[:, pos], P[:, pos]
        order = _order(w)[:m]
        K, Mh = system.K(), system.M_hat()
        scale = spla.norm(K, 1), spla.norm(Mh, 1)
        pairs = []
        for i in order:
            u, p = _normalize(U[:, i], P[:, i], system.M)
            kap = w[i]
            pairs.append(EigenPair(kap, u, p, residual_norm(system, kap, u, p, K, Mh, scale)))
        used_shift = None
        meta = {"method": how}
    elif backend == "shift_invert":
        used_shift = default_shift(system) if shift is None else float(shift)
        pairs, dim = _shift_invert(system, m, used_shift, tol, maxdim, seed)
        pairs = [pr for pr in pairs if np.real(pr.kappa) > 0]
        meta = {"method": "arnoldi", "subspace": dim}
    else:
        raise ValueError(f"unknown backend {backend!r}; use dense, shift_invert or auto")
    if len(pairs) < m:
        raise EigenSolverError(f"only {len(pairs)} of {m} eigenpairs found",
                               partial=EigenResult(pairs, used_shift, backend, meta))
    for pr in pairs:
        if system.symmetric or abs(np.imag(pr.kappa)) <= IMAG_TOL * max(1, abs(pr.kappa)):
            pr.kappa = float(np.real(pr.kappa))
            pr.u, pr.p = np.real(pr.u), np.real(pr.p)
        else:
            pr.kappa = complex(pr.kappa)
    return EigenResult(pairs, used_shift, backend, meta)
