"""Candidate material constants and isotropic hardening laws.

Units: stresses in MPa, lengths in mm, forces in N.  Prices are USD/kg, mass
densities kg/m^3 and CO2 footprints kg/kg.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class MaterialSpec:
    name: str
    kappa: float
    mu: float
    sigma_y: float
    K_iso: float = 0.0
    sigma_inf: float | None = None
    delta: float = 0.0
    h_kin: float = 0.0
    price: float = 0.0
    mass_density: float = 0.0
    co2: float = 0.0
    aliases: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.sigma_inf is None:
            object.__setattr__(self, "sigma_inf", self.sigma_y)
        if not (self.kappa > 0 and self.mu > 0 and self.sigma_y > 0):
            raise ValueError(f"{self.name}: kappa, mu and sigma_y must be positive")
        if self.sigma_inf < self.sigma_y:
            raise ValueError(f"{self.name}: sigma_inf must be >= sigma_y")
        if self.delta < 0 or self.h_kin < 0 or self.K_iso < 0:
            raise ValueError(f"{self.name}: delta, h_kin and K_iso must be >= 0")

    @classmethod
    def from_young(cls, name, E, nu, sigma_y, **kw):
        """Build from Young's modulus and Poisson's ratio."""
        kappa = E / (3.0 * (1.0 - 2.0 * nu))
        mu = E / (2.0 * (1.0 + nu))
        return cls(name=name, kappa=kappa, mu=mu, sigma_y=sigma_y, **kw)

    @property
    def is_linear(self) -> bool:
        """True when k(alpha) is affine (no saturation term)."""
        return self.delta == 0.0 or self.sigma_inf == self.sigma_y

    def scaled(self, **kw) -> "MaterialSpec":
        return replace(self, **kw)


def _check_alpha(alpha):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("equivalent plastic strain must be non-negative")
    return alpha


def hardening_k(mat: MaterialSpec, alpha):
    """k(alpha) = sigma_y + K alpha + (sigma_inf - sigma_y)(1 - exp(-delta alpha))."""
    alpha = _check_alpha(alpha)
    sat = (mat.sigma_inf - mat.sigma_y) * (1.0 - np.exp(-mat.delta * alpha))
    return mat.sigma_y + mat.K_iso * alpha + sat


def hardening_k_prime(mat: MaterialSpec, alpha):
    alpha = _check_alpha(alpha)
    return mat.K_iso + mat.delta * (mat.sigma_inf - mat.sigma_y) * np.exp(-mat.delta * alpha)


class MaterialCatalog:
    """Ordered, name-unique collection of candidate materials."""

    def __init__(self, materials):
        materials = list(materials)
        if not materials:
            raise ValueError("a catalog needs at least one material")
        names = [m.name for m in materials]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate material names in {names}")
        self.materials = materials

    def __len__(self):
        return len(self.materials)

    def __iter__(self):
        return iter(self.materials)

    def __getitem__(self, i):
        return self.materials[i]

    @property
    def names(self):
        return [m.name for m in self.materials]

    def lookup(self, key: str) -> MaterialSpec:
        k = key.lower()
        for m in self.materials:
            if k == m.name.lower() or k in (a.lower() for a in m.aliases):
                return m
        raise KeyError(f"unknown material {key!r}; known: {self.names}")

    def subset(self, keys) -> "MaterialCatalog":
        return MaterialCatalog([self.lookup(k) for k in keys])

    def column(self, attr: str) -> np.ndarray:
        return np.array([getattr(m, attr) for m in self.materials], dtype=float)


_GPA = 1000.0


def builtin_catalog() -> MaterialCatalog:
    """The six reference materials (moduli converted from GPa to MPa)."""
    rows = [
        # name, aliases, kappa, mu, h, K, sigma_y, sigma_inf, delta, price, density, co2
        ("titanium", ("Ti-6Al-4V", "Ti6Al4V"), 115.6, 41.4, 0.0, 0.0, 853.0, 853.0, 0.0, 24.4, 4.4, 40.4),
        ("bronze", ("CuSn10",), 88.9, 29.6, 0.0, 952.0, 145.0, 145.0, 0.0, 13.3, 8.8, 6.0),
        ("nickel-chromium", ("INCONEL 718", "Inconel718", "NiCr"), 165.0, 76.2, 0.0, 129.0, 450.0, 715.0, 16.9,
         25.2, 8.2, 16.6),
        ("steel", ("AISI 316L", "316L"), 141.3, 76.8, 1339.1, 0.0, 226.0, 226.0, 0.0, 6.6, 8.0, 7.4),
        ("lithium", ("Li",), 5.8, 1.8, 2.5, 2.5, 1.0, 1.0, 0.0, 127.0, 0.5, 79.6),
        ("PCL", ("polycaprolactone",), 0.3880, 0.0157, 0.0, 0.0, 25.0, 25.0, 0.0, 6.8, 1.1, 2.3),
    ]
    mats = []
    for name, aliases, kap, mu, h, K, sy, sinf, delta, price, rho, co2 in rows:
        mats.append(MaterialSpec(
            name=name, aliases=aliases, kappa=kap * _GPA, mu=mu * _GPA, h_kin=h, K_iso=K,
            sigma_y=sy, sigma_inf=sinf, delta=delta, price=price,
            mass_density=rho * 1000.0, co2=co2))
    return MaterialCatalog(mats)


def dummy_material() -> MaterialSpec:
    """Perfectly plastic test material with E = 1 MPa, nu = 0.3, sigma_y = 0.2 MPa."""
    return MaterialSpec.from_young("dummy", 1.0, 0.3, 0.2)
