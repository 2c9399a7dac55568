"""Material parameters and the (1+nu)-scaled Lame coefficients.

Only ``1/lambda`` is stored so that the incompressible limit nu = 1/2 is
representable exactly (``inv_lambda == 0``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np


class Lame(NamedTuple):
    mu: float
    inv_lambda: float


class Unscaled(NamedTuple):
    kappa_hat: complex | float
    frequency: complex | float


def _check_nu(nu: float) -> float:
    nu = float(nu)
    if not 0.0 < nu <= 0.5:
        raise ValueError(f"Poisson ratio nu={nu} outside (0, 0.5]")
    return nu


def lame_from(E: float, nu: float) -> Lame:
    """Scaled Lame pair: ``mu = E/2`` and ``inv_lambda = (1 - 2 nu)/(E nu)``."""
    nu = _check_nu(nu)
    E = float(E)
    if not E > 0.0:
        raise ValueError(f"Young modulus must be positive, got E={E}")
    return Lame(E / 2.0, (1.0 - 2.0 * nu) / (E * nu))


def unscale_eigenvalue(kappa, nu: float) -> Unscaled:
    """Undo the (1+nu) scaling and return ``(kappa_hat, sqrt(kappa_hat))``.

    Non-negative real input gives real output; otherwise the principal
    complex square root is taken.
    """
    kappa_hat = np.asarray(kappa) / (1.0 + float(nu))
    if np.iscomplexobj(kappa_hat) or np.any(kappa_hat < 0):
        freq = np.sqrt(kappa_hat.astype(complex))
    else:
        freq = np.sqrt(kappa_hat)
    return Unscaled(kappa_hat[()], freq[()])


def scale_eigenvalue(kappa_hat, nu: float):
    return (1.0 + float(nu)) * kappa_hat


@dataclass(frozen=True)
class Material:
    E: float
    rho: float = 1.0

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"Young modulus must be positive, got E={self.E}")
        if not self.rho > 0:
            raise ValueError(f"density must be positive, got rho={self.rho}")


@dataclass(frozen=True)
class MaterialTable:
    """Per-material Young modulus and density with one global Poisson ratio."""

    nu: float
    entries: Mapping[int, Material] = field(default_factory=dict)

    def __post_init__(self):
        _check_nu(self.nu)
        if not self.entries:
            raise ValueError("material table is empty")
        entries = {int(k): (v if isinstance(v, Material) else Material(*v))
                   for k, v in self.entries.items()}
        object.__setattr__(self, "entries", entries)

    @classmethod
    def homogeneous(cls, E: float = 1.0, nu: float = 0.35, rho: float = 1.0,
                    material_id: int = 0) -> "MaterialTable":
        return cls(nu, {material_id: Material(E, rho)})

    def lame(self, material_id: int) -> Lame:
        return lame_from(self.entries[material_id].E, self.nu)

    @property
    def E_min(self) -> float:
        return min(m.E for m in self.entries.values())

    @property
    def E_max(self) -> float:
        return max(m.E for m in self.entries.values())

    def _lookup(self, ids, attr):
        ids = np.asarray(ids, dtype=np.int64)
        missing = set(np.unique(ids).tolist()) - set(self.entries)
        if missing:
            raise KeyError(f"material id(s) {sorted(missing)} not in the material table")
        keys = np.array(sorted(self.entries))
        vals = np.array([getattr(self, attr)(k) for k in keys])
        return vals[np.searchsorted(keys, ids)]

    def _mu(self, k):
        return self.lame(k).mu

    def _inv_lambda(self, k):
        return self.lame(k).inv_lambda

    def _rho(self, k):
        return self.entries[k].rho

    def mu(self, ids) -> np.ndarray:
        """mu for each material id in ``ids``."""
        return self._lookup(ids, "_mu")

    def inv_lambda(self, ids) -> np.ndarray:
        return self._lookup(ids, "_inv_lambda")

    def rho(self, ids) -> np.ndarray:
        return self._lookup(ids, "_rho")

    def scaled(self, c: float) -> "MaterialTable":
        """Copy with every Young modulus multiplied by ``c`` (densities unchanged)."""
        return MaterialTable(self.nu, {k: Material(m.E * c, m.rho)
                                       for k, m in self.entries.items()})

    def with_nu(self, nu: float) -> "MaterialTable":
        return MaterialTable(nu, dict(self.entries))
