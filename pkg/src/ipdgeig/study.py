"""Rate fitting, extrapolation, spurious-mode detection and parameter sweeps."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .assembly import assemble_system
from .eigensolver import EigenSolverError, solve_evp
from .estimator import adaptive_loop
from .materials import MaterialTable, unscale_eigenvalue
from .mesh import generate_unit_square
from .spaces import build_space

DEFAULT_REL_TOL = 0.02


class FitError(RuntimeError):
    pass


def _check_series(hs, vals, min_points):
    hs = np.asarray(hs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if hs.shape != vals.shape or hs.ndim != 1:
        raise ValueError("h and value series must be 1-D and of equal length")
    if len(hs) < min_points:
        raise ValueError(f"need at least {min_points} points, got {len(hs)}")
    if np.any(hs <= 0):
        raise ValueError("mesh sizes must be positive")
    if np.any(np.diff(hs) >= 0):
        raise ValueError("mesh sizes must be strictly decreasing")
    return hs, vals


def fit_rate(hs, errs) -> float:
    """Least-squares slope of ``log(err)`` against ``log(h)``.

    ``hs`` may equally be a decreasing list of any size measure; pass
    ``dof`` series through :func:`fit_dof_rate` instead.
    """
    hs, errs = _check_series(hs, errs, 3)
    if np.any(errs <= 0):
        raise ValueError("errors must be positive; extrapolate a reference value first")
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)


def fit_dof_rate(dofs, errs) -> float:
    """Slope of ``log(err)`` against ``log(dof)`` (negative for convergence)."""
    dofs = np.asarray(dofs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if len(dofs) < 2 or dofs.shape != errs.shape:
        raise ValueError("need at least two (dof, err) pairs of equal length")
    if np.any(errs <= 0) or np.any(dofs <= 0):
        raise ValueError("dofs and errors must be positive")
    slope, _ = np.polyfit(np.log(dofs), np.log(errs), 1)
    return float(slope)


@dataclass
class Extrapolation:
    value: float
    order: float | None
    constant: float
    residual: float


def extrapolate(hs, values, max_order: float = 4.0) -> Extrapolation:
    """Fit ``values ~ v* + C h^t`` with ``0 < t <= max_order``.

    A constant series returns ``order=None``.
    """
    hs, vals = _check_series(hs, values, 4)
    scale = max(np.abs(vals).max(), np.finfo(float).tiny)
    spread = np.ptp(vals)
    if spread <= 1e-14 * scale:
        return Extrapolation(float(vals.mean()), None, 0.0, float(spread))
    hn = hs / hs[0]
    y = vals / scale

    def resid(x):
        v, c, t = x
        return v + c * hn ** t - y

    best = None
    for t0 in (1.0, 2.0, 0.5 * max_order):
        t0 = min(t0, max_order)
        c0 = (y[0] - y[-1]) / max(1.0 - hn[-1] ** t0, 1e-12)
        x0 = np.array([y[-1] - c0 * hn[-1] ** t0, c0, t0])
        sol = least_squares(resid, x0, bounds=([-np.inf, -np.inf, 1e-6], [np.inf, np.inf, max_order]),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if best is None or sol.cost < best.cost:
            best = sol
    if not best.success or not np.all(np.isfinite(best.x)):
        raise FitError(f"extrapolation fit failed: {best.message} (x={best.x})")
    v, c, t = best.x
    return Extrapolation(float(v * scale), float(t), float(c * scale / hs[0] ** t),
                         float(np.linalg.norm(best.fun) * scale))


def detect_spurious(computed, references, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Flag computed values with no matching reference.

    Matching is monotone: both lists are sorted and each reference can absorb
    at most one computed value.  Returned flags follow the input order of
    ``computed``.
    """
    refs = np.sort(np.asarray(references, dtype=float))
    if refs.size == 0:
        raise ValueError("reference list is empty")
    comp = np.asarray(computed, dtype=float)
    order = np.argsort(comp, kind="stable")
    c = comp[order]
    nc, nr = len(c), len(refs)

    def close(i, j):
        return abs(c[i] - refs[j]) <= rel_tol * abs(refs[j])

    # longest order-preserving matching (LCS style dynamic programme)
    L = np.zeros((nc + 1, nr + 1), dtype=np.int64)
    for i in range(nc - 1, -1, -1):
        for j in range(nr - 1, -1, -1):
            L[i, j] = max(L[i + 1, j], L[i, j + 1], L[i + 1, j + 1] + 1 if close(i, j) else 0)
    matched = np.zeros(nc, dtype=bool)
    i = j = 0
    while i < nc and j < nr:
        if close(i, j) and L[i, j] == L[i + 1, j + 1] + 1:
            matched[i] = True
            i += 1
            j += 1
        elif L[i + 1, j] >= L[i, j + 1]:
            i += 1
        else:
            j += 1
    flags = np.empty(nc, dtype=bool)
    flags[order] = ~matched
    return flags


# --- sweeps -----------------------------------------------------------------

@dataclass
class SweepCell:
    k: int
    a: float
    frequencies: np.ndarray | None
    spurious: np.ndarray | None
    error: str | None = None


def solve_frequencies(mesh, materials: MaterialTable, k: int, a: float = 10.0, m: int = 10,
                      epsilon: int = 1, backend: str = "auto", shift=None, tol: float = 1e-8,
                      seed: int = 0) -> np.ndarray:
    """First ``m`` eigenfrequencies ``sqrt(kappa_hat)``."""
    system = assemble_system(build_space(mesh, k), materials, a=a, epsilon=epsilon)
    res = solve_evp(system, m, backend=backend, shift=shift, tol=tol, seed=seed)
    return np.atleast_1d(unscale_eigenvalue(res.kappas, materials.nu).frequency)


def stabilization_sweep(mesh, materials: MaterialTable, ks, as_, m: int = 10, references=None,
                        rel_tol: float = DEFAULT_REL_TOL, **solver) -> list[SweepCell]:
    """One cell per ``(k, a)``; solver failures are recorded, not raised."""
    cells = []
    for k in ks:
        for a in as_:
            try:
                f = solve_frequencies(mesh, materials, k, a, m, **solver)
            except (EigenSolverError, np.linalg.LinAlgError) as exc:
                cells.append(SweepCell(k, a, None, None, str(exc)))
                continue
            flags = None
            if references is not None:
                flags = detect_spurious(np.real(f), references, rel_tol)
            cells.append(SweepCell(k, a, f, flags))
    return cells


@dataclass
class ConvergenceSeries:
    """Values on a sequence of meshes with fitted order and extrapolation."""

    hs: np.ndarray
    values: np.ndarray
    dofs: np.ndarray
    reference: float | None = None
    extrapolation: Extrapolation | None = None
    meta: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        target = self.reference if self.reference is not None else (
            self.extrapolation.value if self.extrapolation is not None else None)
        if target is None:
            raise ValueError("no reference or extrapolated value available")
        return np.abs(self.values - target)

    @property
    def order(self) -> float:
        return fit_rate(self.hs, self.errors)


def uniform_convergence(materials: MaterialTable, ns, k: int = 1, a: float = 10.0,
                        boundary="bottom", mode: int = 0, quantity: str = "frequency",
                        reference: float | None = None, m: int | None = None,
                        split=None, **solver) -> ConvergenceSeries:
    """Structured ``n x n`` meshes of the unit square, one solve each.

    ``quantity`` is ``'frequency'`` (sqrt of kappa_hat) or ``'kappa_hat'``.
    """
    if quantity not in ("frequency", "kappa_hat"):
        raise ValueError(f"unknown quantity {quantity!r}")
    ns = sorted(ns)
    m = m or mode + 1
    hs, vals, dofs = [], [], []
    for n in ns:
        mesh = generate_unit_square(n, boundary, split=split)
        system = assemble_system(build_space(mesh, k), materials, a=a)
        res = solve_evp(system, m, **solver)
        un = unscale_eigenvalue(res.kappas, materials.nu)
        v = np.atleast_1d(un.frequency if quantity == "frequency" else un.kappa_hat)[mode]
        hs.append(1.0 / n)
        vals.append(float(np.real(v)))
        dofs.append(system.n_u + system.n_p)
    hs, vals = np.array(hs), np.array(vals)
    ext = None
    if len(ns) >= 4:
        try:
            ext = extrapolate(hs, vals, max_order=2 * k + 2)
        except FitError as exc:
            warnings.warn(str(exc))
    return ConvergenceSeries(hs, vals, np.array(dofs), reference, ext,
                             {"k": k, "a": a, "nu": materials.nu, "mode": mode,
                              "quantity": quantity})


@dataclass
class RobustnessRow:
    E: float
    nu: float
    dofs: np.ndarray
    kappa_hat: np.ndarray
    eff: np.ndarray
    extrapolated: float | None


def robustness_sweep(Es, nu: float, ns=(3, 5, 9, 17), reference_per_E: float | None = None,
                     k: int = 1, a: float = 10.0, boundary="bottom", **solver) -> list[RobustnessRow]:
    """Effectivity of the first eigenvalue on uniform meshes for several E.

    ``reference_per_E`` is the constant ``c`` in ``kappa_hat_1 = c E``.  The
    extrapolated eigenvalue uses the four finest levels.
    """
    rows = []
    for E in Es:
        mats = MaterialTable.homogeneous(E, nu)
        ref = None if reference_per_E is None else reference_per_E * E
        dofs, kh, eff = [], [], []
        for n in sorted(ns):
            rec = adaptive_loop(generate_unit_square(n, boundary), mats, k=k, iterations=0,
                                a=a, reference=ref, **solver)[0]
            dofs.append(rec.dof)
            kh.append(float(np.real(rec.kappa_hat[0])))
            eff.append(np.nan if rec.eff is None else rec.eff)
        kh = np.array(kh)
        ext = None
        if len(ns) >= 4:
            # the coarsest levels are pre-asymptotic; fit the finest four
            hs = 1.0 / np.array(sorted(ns), dtype=float)
            ext = extrapolate(hs[-4:], kh[-4:], 2 * k + 2).value
        rows.append(RobustnessRow(float(E), nu, np.array(dofs), kh, np.array(eff), ext))
    return rows
