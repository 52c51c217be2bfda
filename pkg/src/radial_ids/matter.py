"""Prescribed matter data (mu, J_0, J_I, k) as angular amplitude times power law."""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate as sci_integrate
from scipy.special import gamma

from .errors import DecayThresholdError, DivergentTailError, NonPositiveLapseError

# Real polynomial basis on the unit sphere (up to degree 2) in x, y, z.
_BASIS = ("1", "x", "y", "z", "xy", "xz", "yz", "x2-y2", "3z2-1")


def _basis_values(name, x, y, z):
    return {
        "1": np.ones_like(x),
        "x": x,
        "y": y,
        "z": z,
        "xy": x * y,
        "xz": x * z,
        "yz": y * z,
        "x2-y2": x * x - y * y,
        "3z2-1": 3.0 * z * z - 1.0,
    }[name]


def _basis_gradient(name, x, y, z):
    zero, one = np.zeros_like(x), np.ones_like(x)
    g = {
        "1": (zero, zero, zero),
        "x": (one, zero, zero),
        "y": (zero, one, zero),
        "z": (zero, zero, one),
        "xy": (y, x, zero),
        "xz": (z, zero, x),
        "yz": (zero, z, y),
        "x2-y2": (2 * x, -2 * y, zero),
        "3z2-1": (zero, zero, 6 * z),
    }[name]
    return np.stack(g, axis=-1)


@dataclass(frozen=True)
class AngularProfile:
    """Smooth function on S^2 written in a low-degree polynomial basis.

    ``coeffs`` maps basis names (``"1", "x", "y", "z", "xy", "xz", "yz",
    "x2-y2", "3z2-1"``) to real coefficients.
    """

    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        for k in self.coeffs:
            if k not in _BASIS:
                raise ValueError(f"unknown angular basis function {k!r}")

    @classmethod
    def constant(cls, c):
        return cls({"1": float(c)}) if c else cls({})

    @property
    def is_constant(self):
        return all(v == 0.0 for k, v in self.coeffs.items() if k != "1")

    @property
    def is_zero(self):
        return all(v == 0.0 for v in self.coeffs.values())

    @property
    def mean_value(self):
        return float(self.coeffs.get("1", 0.0))

    def scaled(self, c):
        return AngularProfile({k: c * v for k, v in self.coeffs.items()})

    def __call__(self, theta, phi):
        st = np.sin(theta)
        x, y, z = st * np.cos(phi), st * np.sin(phi), np.cos(theta) * np.ones_like(phi)
        out = np.zeros(np.broadcast(x, z).shape)
        for k, v in self.coeffs.items():
            out = out + v * _basis_values(k, x, y, z)
        return out

    def derivatives(self, theta, phi):
        """Coordinate derivatives ``(d/dtheta, d/dphi)``."""
        st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
        x, y, z = st * cp, st * sp, ct * np.ones_like(phi)
        grad = np.zeros(np.broadcast(x, z).shape + (3,))
        for k, v in self.coeffs.items():
            grad = grad + v * _basis_gradient(k, x, y, z)
        et = np.stack([ct * cp, ct * sp, -st * np.ones_like(phi)], axis=-1)
        ep = np.stack([-sp * st, cp * st, np.zeros_like(x)], axis=-1)
        return np.einsum("...a,...a->...", grad, et), np.einsum("...a,...a->...", grad, ep)

    def bound(self):
        """Crude sup-norm bound from the coefficients."""
        return float(sum(abs(v) * (2.0 if k == "3z2-1" else 1.0) for k, v in self.coeffs.items()))


ZERO = AngularProfile({})


@dataclass(frozen=True)
class MatterModel:
    """Power-law matter data.

    ``mu = A_mu r^-c``, ``J_0 = A_J r^-(b+1)``, ``k = A_k r^-b``.  In
    ``umbilic_derived`` mode ``J_I = -int_r^inf d_I J_0 ds = -d_I A_J r^-b / b``;
    in ``explicit`` mode ``J_I = d_I Q r^-b`` for the potential ``A_jI``.
    """

    A_mu: AngularProfile = ZERO
    A_j: AngularProfile = ZERO
    A_k: AngularProfile = ZERO
    decay_b: float = 2.0
    decay_c: float = 4.0
    Lambda: float = 0.0
    n: int = 3
    jI_mode: str = "explicit"
    A_jI: AngularProfile = ZERO

    def __post_init__(self):
        if self.jI_mode not in ("explicit", "umbilic_derived"):
            raise ValueError(f"unknown jI_mode {self.jI_mode!r}")

    # radial profiles ------------------------------------------------------

    def mu_radial(self, r):
        return np.power(r, -self.decay_c)

    def j0_radial(self, r):
        return np.power(r, -self.decay_b - 1.0)

    def k_radial(self, r):
        return np.power(r, -self.decay_b)

    @property
    def is_spherical(self):
        return (
            self.A_mu.is_constant
            and self.A_j.is_constant
            and self.A_k.is_constant
            and self.A_jI.is_constant
        )

    @property
    def is_vacuum(self):
        return self.A_mu.is_zero and self.A_j.is_zero and self.A_jI.is_zero

    # scalar profiles for spherically symmetric runs ----------------------

    def mu_of_r(self, r):
        return self.A_mu.mean_value * self.mu_radial(r)

    def j0_of_r(self, r):
        return self.A_j.mean_value * self.j0_radial(r)

    def k_of_r(self, r):
        return self.A_k.mean_value * self.k_radial(r)

    # fields on a sphere grid ---------------------------------------------

    def mu(self, r, grid):
        return self.A_mu(grid.theta_nodes, grid.phi_nodes) * self.mu_radial(r)

    def j0(self, r, grid):
        return self.A_j(grid.theta_nodes, grid.phi_nodes) * self.j0_radial(r)

    def k(self, r, grid):
        return self.A_k(grid.theta_nodes, grid.phi_nodes) * self.k_radial(r)

    def jI_angular(self, grid):
        """Angular factor of ``J_I``, shape ``(N, 2)`` (theta, phi components)."""
        if self.jI_mode == "umbilic_derived":
            dt, dp = self.A_j.derivatives(grid.theta_nodes, grid.phi_nodes)
            return -np.stack([dt, dp], axis=1) / self.decay_b
        dt, dp = self.A_jI.derivatives(grid.theta_nodes, grid.phi_nodes)
        return np.stack([dt, dp], axis=1)

    def jI(self, r, grid):
        return self.jI_angular(grid) * self.k_radial(r)


def power_law_matter(A_mu=None, A_j=None, A_k=None, decay_b=2.0, decay_c=4.0,
                     Lambda=0.0, n=3, jI_mode="explicit", A_jI=None) -> MatterModel:
    """Validated constructor enforcing the decay thresholds ``b > n/2``, ``c > (n+2)/2``."""
    if not decay_b > n / 2.0:
        raise DecayThresholdError(f"decay_b={decay_b} must exceed n/2={n / 2.0}", key="decay_b")
    if not decay_c > (n + 2) / 2.0:
        raise DecayThresholdError(
            f"decay_c={decay_c} must exceed (n+2)/2={(n + 2) / 2.0}", key="decay_c"
        )
    if Lambda > 0:
        raise ValueError("Lambda must be nonpositive")
    if n < 3:
        raise ValueError("dimension n must be at least 3")

    def prof(a):
        if a is None:
            return ZERO
        if isinstance(a, AngularProfile):
            return a
        if isinstance(a, dict):
            return AngularProfile(dict(a))
        return AngularProfile.constant(float(a))

    return MatterModel(prof(A_mu), prof(A_j), prof(A_k), float(decay_b), float(decay_c),
                       float(Lambda), int(n), jI_mode, prof(A_jI))


def covector_to_cartesian(grid, jI):
    """Coordinate covector ``(J_theta, J_phi)`` to Cartesian components on the unit sphere."""
    return jI[:, :1] * grid.e_theta + (jI[:, 1:] / grid.sin_theta[:, None]) * grid.e_phi


def tangential_norm_sq(grid, jI, metric=None):
    """``sigma^{IK} J_I J_K`` for a coordinate covector field."""
    c = covector_to_cartesian(grid, jI)
    if metric is None:
        return np.einsum("na,na->n", c, c)
    return np.einsum("na,nab,nb->n", c, metric.cartesian_inverse, c)


def j_norm_g(model, r, N, grid, metric=None):
    """``|J|_g`` from ``N^-2 J_0^2 + r^-2 |J^T|^2_sigma``."""
    N = np.asarray(N, dtype=float)
    if np.any(N <= 0.0):
        raise NonPositiveLapseError("lapse must be positive to evaluate |J|_g")
    j0 = model.j0(r, grid)
    jt = tangential_norm_sq(grid, model.jI(r, grid), metric)
    return np.sqrt(j0**2 / N**2 + jt / r**2)


def dec_margin(model, r, N, grid, metric=None):
    """Dominant energy margin ``mu - |J|_g`` on the leaf of radius ``r``."""
    return model.mu(r, grid) - j_norm_g(model, r, N, grid, metric)


class Budgets(NamedTuple):
    mu_budget: float
    j_budget: float
    tail_bound: float
    mu_tail: float
    j_tail: float


def sphere_area(n):
    """Area of the unit round S^(n-1)."""
    return 2.0 * np.pi ** (n / 2.0) / gamma(n / 2.0)


def integrability_budgets(model, r0, r_max, grid=None) -> Budgets:
    """The two r^(n-1)-weighted integrability budgets over ``[r0, r_max]``.

    The angular factor is integrated on ``grid`` (required when the model is
    not spherically symmetric or ``n == 3`` with angular dependence); the
    radial factor by adaptive quadrature.  ``tail_bound`` bounds the sum of
    both integrals over ``(r_max, inf)``.
    """
    if not r0 < r_max:
        raise ValueError("need r0 < r_max")
    n = model.n
    if grid is None and not model.is_spherical:
        raise ValueError("a sphere grid is needed for angular dependence")

    if grid is not None and n == 3:
        mu_ang = float(np.dot(grid.weights, model.A_mu(grid.theta_nodes, grid.phi_nodes)))
        a = model.A_j(grid.theta_nodes, grid.phi_nodes)
        jt = tangential_norm_sq(grid, model.jI_angular(grid))
        j_ang = float(np.dot(grid.weights, np.sqrt(a**2 + jt)))
        j_sup = float(np.sqrt(a**2 + jt).max())
    else:
        area = sphere_area(n)
        mu_ang = area * model.A_mu.mean_value
        j_sup = abs(model.A_j.mean_value)
        j_ang = area * j_sup

    c, b = model.decay_c, model.decay_b
    mu_tail = j_tail = 0.0
    if mu_ang != 0.0:
        if c <= n:
            raise DivergentTailError(f"mu budget diverges: decay_c={c} <= n={n}")
        mu_tail = abs(mu_ang) * r_max ** (n - c) / (c - n)
    if j_sup != 0.0:
        if b + 1.0 <= n:
            raise DivergentTailError(f"J budget diverges: decay_b+1={b + 1.0} <= n={n}")
        j_tail = j_ang * r_max ** (n - b - 1.0) / (b + 1.0 - n)

    opts = dict(epsabs=0.0, epsrel=1e-12, limit=200)
    mu_rad = sci_integrate.quad(lambda s: s ** (n - 1) * model.mu_radial(s), r0, r_max, **opts)[0]
    j_rad = sci_integrate.quad(lambda s: s ** (n - 1) * model.j0_radial(s), r0, r_max, **opts)[0]
    return Budgets(mu_ang * mu_rad, j_ang * j_rad, mu_tail + j_tail, mu_tail, j_tail)
