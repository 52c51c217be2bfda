"""Spherically symmetric solutions of the reduced constraint ODEs by quadrature.

With sigma round the momentum and Hamiltonian constraints decouple into
linear first order ODEs for ``p`` and ``f = 1 - 2 Lambda r^2/(n(n-1)) - N^-2``.
``p`` is fixed by decay at infinity; ``f`` carries one constant ``f0``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import (
    DegenerateMetricError,
    DivergentTailError,
    InvalidFChoiceError,
    NonSphericalModelError,
)
from .matter import MatterModel
from .quadrature import (
    QUAD_RTOL,
    cumulative_from_left,
    cumulative_to_infinity,
    gauss_legendre,
    power_tail,
)


@dataclass(frozen=True)
class RadialGrid:
    """Geometric radial ladder ``r0 = nodes[0] < ... < nodes[-1] = r_max``."""

    r0: float
    r_max: float
    n_nodes: int = 400
    n: int = 3
    Lambda: float = 0.0
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.r0 < self.r_max:
            raise ValueError("need 0 < r0 < r_max")
        if self.n_nodes < 2:
            raise ValueError("need at least two radial nodes")
        if self.Lambda > 0.0:
            raise ValueError("Lambda must be nonpositive")
        nodes = self.r0 * (self.r_max / self.r0) ** (np.arange(self.n_nodes) / (self.n_nodes - 1))
        nodes[0], nodes[-1] = self.r0, self.r_max
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def from_nodes(cls, nodes, n=3, Lambda=0.0):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0.0) or nodes[0] <= 0.0:
            raise ValueError("radial nodes must be positive and strictly increasing")
        g = cls(float(nodes[0]), float(nodes[-1]), nodes.size, n, Lambda)
        object.__setattr__(g, "nodes", nodes.copy())
        return g

    def background(self, r):
        """``1 - 2 Lambda r^2 / (n (n-1))``."""
        return 1.0 - 2.0 * self.Lambda * np.asarray(r, dtype=float) ** 2 / (self.n * (self.n - 1))


def _require_spherical(model: MatterModel, grid: RadialGrid):
    if not model.is_spherical:
        raise NonSphericalModelError("the spherical solver needs constant angular amplitudes")
    if model.n != grid.n:
        raise ValueError(f"model dimension {model.n} differs from grid dimension {grid.n}")


class RadialProfile:
    """``p`` on the grid together with an evaluator at arbitrary radii.

    Stores ``I(r) = int_r^inf s c1(s) ds`` at the nodes; ``p = -I / r``.
    """

    def __init__(self, model: MatterModel, grid: RadialGrid, rtol=QUAD_RTOL):
        _require_spherical(model, grid)
        n = grid.n
        self.model, self.grid = model, grid
        self._integrand = lambda s: model.k_of_r(s) - 8.0 * np.pi * s * model.j0_of_r(s) / (n - 1)
        b = model.decay_b
        end = self._integrand(grid.r_max)
        if end != 0.0 and b <= 1.0:
            raise DivergentTailError(f"momentum tail diverges for decay_b={b}")
        self.tail = power_tail(end, grid.r_max, b) if end != 0.0 else 0.0
        self.I = cumulative_to_infinity(self._integrand, grid.nodes, self.tail, rtol)
        self.values = -self.I / grid.nodes

    def tail_integral(self, r):
        """``I(r)`` for ``r >= r_max``, exact for power-law data."""
        r = np.asarray(r, dtype=float)
        if self.tail == 0.0:
            return np.zeros_like(r)
        return self._integrand(r) * r / (self.model.decay_b - 1.0)

    def __call__(self, r):
        """``p(r)``; vectorized, exact to rounding between nodes."""
        r = np.asarray(r, dtype=float)
        nodes = self.grid.nodes
        i = np.clip(np.searchsorted(nodes, r, side="right"), 1, nodes.size - 1)
        upper = nodes[i]
        inside = r < self.grid.r_max
        r_in = np.where(inside, r, upper)
        I = self.I[i] + gauss_legendre(self._integrand, r_in, upper)
        if np.any(~inside):
            I = np.where(inside, I, self.tail_integral(np.maximum(r, self.grid.r_max)))
        return -I / r


def solve_p(model: MatterModel, grid: RadialGrid, rtol=QUAD_RTOL) -> np.ndarray:
    """``p(r) = -(1/r) int_r^inf s c1(s) ds`` with ``c1 = k/s - 8 pi J0/(n-1)``."""
    return RadialProfile(model, grid, rtol).values


def _c2(model, profile, n):
    def c2(s):
        p = profile(s)
        return (-s * (2.0 * model.k_of_r(s) * p + (n - 2) * p**2)
                + 16.0 * np.pi * s * model.mu_of_r(s) / (n - 1))
    return c2


class _FIntegral:
    """``F(r) = int_{r0}^r c2(s) s^(n-2) ds`` at nodes and between them."""

    def __init__(self, model, profile, grid, rtol=QUAD_RTOL):
        n = grid.n
        c2 = _c2(model, profile, n)
        self._integrand = lambda s: c2(s) * np.asarray(s, dtype=float) ** (n - 2)
        self.grid = grid
        if model.A_mu.is_zero and model.A_k.is_zero and model.A_j.is_zero:
            self.F = np.zeros(grid.nodes.size)
        else:
            self.F = cumulative_from_left(lambda s: float(self._integrand(s)), grid.nodes, rtol)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        nodes = self.grid.nodes
        i = np.clip(np.searchsorted(nodes, r, side="right") - 1, 0, nodes.size - 2)
        if not np.any(self.F):
            return np.zeros_like(r)
        return self.F[i] + gauss_legendre(self._integrand, nodes[i], r)


def solve_f(p, model: MatterModel, f0: float, grid: RadialGrid, rtol=QUAD_RTOL) -> np.ndarray:
    """``f(r) = r^-(n-2) [f0 + int_{r0}^r c2 s^(n-2) ds]``.

    ``p`` may be a :class:`RadialProfile` (preferred, evaluated between
    nodes) or an array of node values, which is then interpolated in log r.
    """
    if not np.isfinite(f0):
        raise ValueError("f0 must be finite")
    _require_spherical(model, grid)
    if not isinstance(p, RadialProfile):
        prof = RadialProfile(model, grid, rtol)
        if not np.allclose(prof.values, p, rtol=1e-8, atol=1e-14):
            values = np.asarray(p, dtype=float)
            logr = np.log(grid.nodes)
            prof = lambda s, _v=values: np.interp(np.log(s), logr, _v)  # noqa: E731
        p = prof
    F = _FIntegral(model, p, grid, rtol)
    return (f0 + F.F) / grid.nodes ** (grid.n - 2)


def lapse_from_f(f, grid: RadialGrid, r=None) -> np.ndarray:
    """``N = (1 - 2 Lambda r^2/(n(n-1)) - f)^(-1/2)``; ``inf`` where the argument is zero."""
    r = grid.nodes if r is None else np.asarray(r, dtype=float)
    arg = grid.background(r) - np.asarray(f, dtype=float)
    scale = np.maximum(1.0, np.abs(grid.background(r)))
    bad = (arg < -1e-13 * scale) | ((r > grid.r0) & (arg <= 0.0))
    if np.any(bad):
        radius = float(np.asarray(r)[np.argmax(bad)])
        raise DegenerateMetricError(
            f"metric degenerates: 1 - 2 Lambda r^2/(n(n-1)) - f < 0 at r = {radius:.6g}",
            radius=radius,
        )
    arg = np.maximum(arg, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(arg > 0.0, 1.0 / np.sqrt(np.where(arg > 0.0, arg, 1.0)), np.inf)


def select_f0(mode, p, model: MatterModel, grid: RadialGrid, value=None) -> float:
    """Integration constant from the inner boundary condition.

    ``mode`` is ``"minimal"`` (``1/N(r0) = 0``), ``"generalized_horizon"``
    (``1/N(r0) = |r0 p(r0)|``) or ``"prescribed"`` (``1/N(r0) = value``).
    Since ``F(r0) = 0``, ``f(r0) = f0 r0^-(n-2)`` and each condition fixes
    ``f0`` in closed form.
    """
    r0, n = grid.r0, grid.n
    p0 = float(p(r0)) if callable(p) else float(np.asarray(p)[0])
    if mode == "minimal":
        target = 0.0
    elif mode == "generalized_horizon":
        target = abs(r0 * p0)
    elif mode == "prescribed":
        if value is None or not value >= 0.0:
            raise InvalidFChoiceError("prescribed boundary value of 1/N must be nonnegative")
        target = float(value)
    else:
        raise InvalidFChoiceError(f"unknown boundary mode {mode!r}")
    return r0 ** (n - 2) * (float(grid.background(r0)) - target**2)


@dataclass
class RadialSolution:
    grid: RadialGrid
    model: MatterModel
    p: np.ndarray
    f: np.ndarray
    N: np.ndarray
    f0: float
    p_tail: float
    profile: RadialProfile = field(repr=False)
    f_integral: _FIntegral = field(repr=False)
    boundary: str = "unspecified"

    @property
    def r(self):
        return self.grid.nodes

    def p_at(self, r):
        return self.profile(r)

    def f_at(self, r):
        r = np.asarray(r, dtype=float)
        return (self.f0 + self.f_integral(r)) / r ** (self.grid.n - 2)

    def N_at(self, r):
        r = np.asarray(r, dtype=float)
        arg = self.grid.background(r) - self.f_at(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 1.0 / np.sqrt(arg)

    def h_at(self, r):
        r = np.asarray(r, dtype=float)
        return self.grid.background(r) - self.f_at(r) - r**2 * self.p_at(r) ** 2

    def k(self, r=None):
        return self.model.k_of_r(self.r if r is None else r)

    def to_csv(self, path):
        h, _ = static_potential(self)
        write_radial_csv(path, self.r, self.p, self.f, self.N, h)


def write_radial_csv(path, r, p, f, N, h):
    header = "# radial-ids radial profile v1\nr,p,f,N,h"
    table = np.column_stack([r, p, f, N, h])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")


def solve_spherical(model: MatterModel, grid: RadialGrid, mode="minimal", value=None,
                    f0=None, rtol=QUAD_RTOL) -> RadialSolution:
    """Full spherically symmetric solve; ``f0`` overrides ``mode`` when given."""
    profile = RadialProfile(model, grid, rtol)
    if f0 is None:
        f0 = select_f0(mode, profile, model, grid, value)
        boundary = mode
    else:
        boundary = "explicit_f0"
    F = _FIntegral(model, profile, grid, rtol)
    f = (f0 + F.F) / grid.nodes ** (grid.n - 2)
    N = lapse_from_f(f, grid)
    return RadialSolution(grid, model, profile.values, f, N, float(f0), profile.tail, profile, F,
                          boundary)


def static_potential(solution: RadialSolution, tol=1e-12):
    """``h = 1/N^2 - r^2 p^2`` on the nodes and the radii where it vanishes.

    Nodes with ``|h| <= tol`` count as zeros; sign changes between nodes are
    refined with Brent's method on the continuous evaluator.
    """
    r = solution.r
    h = solution.grid.background(r) - solution.f - r**2 * solution.p**2
    zeros = [float(ri) for ri, hi in zip(r, h) if abs(hi) <= tol]
    for i in range(r.size - 1):
        a, b = h[i], h[i + 1]
        if abs(a) <= tol or abs(b) <= tol:
            continue
        if a * b < 0.0:
            zeros.append(optimize.brentq(lambda x: float(solution.h_at(x)), r[i], r[i + 1],
                                         xtol=1e-14, rtol=1e-14))
    return h, sorted(zeros)


def ode_residuals(solution: RadialSolution, step=1e-3):
    """Relative pointwise residuals of the ``p`` and ``f`` ODEs at the nodes.

    Derivatives come from a five-point stencil on the continuous evaluators,
    one-sided near the ends of the ladder.
    """
    g, m, n = solution.grid, solution.model, solution.grid.n
    r = g.nodes
    hstep = step * r
    # shift stencils inside [r0, r_max]
    centre = np.clip(r, g.r0 + 2 * hstep, g.r_max - 2 * hstep)

    def deriv(fn):
        return (fn(centre - 2 * hstep) - 8 * fn(centre - hstep) + 8 * fn(centre + hstep)
                - fn(centre + 2 * hstep)) / (12 * hstep)

    dp = deriv(solution.p_at)
    df = deriv(solution.f_at)
    p, f = solution.p_at(centre), solution.f_at(centre)
    k, j0, mu = m.k_of_r(centre), m.j0_of_r(centre), m.mu_of_r(centre)
    rhs_p = (k - p) / centre - 8.0 * np.pi * j0 / (n - 1)
    c2 = -centre * (2 * k * p + (n - 2) * p**2) + 16.0 * np.pi * centre * mu / (n - 1)
    rhs_f = -(n - 2) * f / centre + c2
    scale_p = np.abs(dp) + np.abs(k / centre) + np.abs(p / centre) + np.abs(8 * np.pi * j0) + 1e-300
    scale_f = np.abs(df) + np.abs((n - 2) * f / centre) + np.abs(c2) + 1e-300
    return np.abs(dp - rhs_p) / scale_p, np.abs(df - rhs_f) / scale_f
