"""Totally umbilic data (k = p) in three dimensions.

The momentum constraint reduces to ``d_r p = -4 pi J_0`` together with the
angular compatibility ``d_I p = -4 pi J_I``.  The Hamiltonian constraint
becomes a quasilinear parabolic equation in r for ``omega = N^-2`` (or for
``omega / (1 + r^2)`` when Lambda = -3), marched with an IMEX scheme and
bracketed by explicit comparison barriers.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import optimize
from scipy.sparse.linalg import splu

from .errors import (
    CompatibilityError,
    DegenerationError,
    DivergentTailError,
    NonConvergentSupError,
    ParabolicityWindowError,
    WrongDimensionError,
)
from .family import MetricFamily
from .imex import IMEXProblem, ImplicitSolveFailed, integrate
from .matter import MatterModel
from .quadrature import QUAD_RTOL, cumulative_to_infinity, gauss_legendre, power_tail
from .sphere import SphereGrid
from .spherical import RadialGrid

HYPERBOLIC_LAMBDA = -3.0


def _check_dimension(model, rgrid):
    if model.n != 3 or rgrid.n != 3:
        raise WrongDimensionError("umbilic numerics are implemented for n = 3 only")


# ---------------------------------------------------------------------------
# momentum


class _TailProfile:
    """``G(r) = int_r^inf s^-(b+1) ds`` by quadrature plus analytic tail."""

    def __init__(self, b, nodes, rtol=QUAD_RTOL):
        if not b > 0.0:
            raise DivergentTailError(f"J_0 tail diverges for decay_b={b}")
        self.b = b
        self.nodes = nodes
        self._f = lambda s: np.power(s, -b - 1.0)
        self.tail = power_tail(self._f(nodes[-1]), nodes[-1], b + 1.0)
        self.values = cumulative_to_infinity(self._f, nodes, self.tail, rtol)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        nodes = self.nodes
        if np.all(r >= nodes[-1]):
            return self._f(r) * r / self.b
        i = np.clip(np.searchsorted(nodes, r, side="right"), 1, nodes.size - 1)
        inside = r < nodes[-1]
        r_in = np.where(inside, r, nodes[i])
        val = self.values[i] + gauss_legendre(self._f, r_in, nodes[i])
        return np.where(inside, val, self._f(np.maximum(r, nodes[-1])) * r / self.b)


@dataclass
class UmbilicMomentumSolution:
    """Umbilicity factor ``p(r, .)`` on the radial nodes and sphere grid.

    ``p`` has shape ``(n_r, N)``; ``jI`` has shape ``(n_r, N, 2)`` holding
    coordinate components ``(J_theta, J_phi)``.
    """

    model: MatterModel
    sphere: SphereGrid
    radii: np.ndarray
    p: np.ndarray
    C: np.ndarray
    jI: np.ndarray
    compat_residual: float
    compat_relative: float
    profile: _TailProfile = field(repr=False)

    def __post_init__(self):
        self._amp = self.model.A_j(self.sphere.theta_nodes, self.sphere.phi_nodes)

    def p_at(self, r):
        return 4.0 * np.pi * self._amp * float(self.profile(r))

    def jI_at(self, r):
        if self.model.jI_mode == "umbilic_derived":
            dt, dp = self.model.A_j.derivatives(self.sphere.theta_nodes, self.sphere.phi_nodes)
            return -np.stack([dt, dp], axis=1) * float(self.profile(r))
        return self.model.jI(r, self.sphere)


def integrate_p_umbilic(model: MatterModel, rgrid: RadialGrid, sphere: SphereGrid,
                        compat_tol=1e-2, rtol=QUAD_RTOL) -> UmbilicMomentumSolution:
    """Solve ``d_r p = -4 pi J_0`` with decay at infinity and check compatibility.

    With ``J_0 = A_J r^-(b+1)`` one has ``p = 4 pi A_J G(r)`` and, for the
    derived angular momentum, ``J_I = -d_I A_J G(r)``.  The compatibility
    residual ``max |d_I p + 4 pi J_I|`` uses finite differences for ``d_I p``;
    it is O(h^2) when ``J_I`` is consistent with ``J_0``.
    """
    _check_dimension(model, rgrid)
    nodes = rgrid.nodes
    prof = _TailProfile(model.decay_b, nodes, rtol)
    amp = model.A_j(sphere.theta_nodes, sphere.phi_nodes)
    p = 4.0 * np.pi * np.outer(prof.values, amp)
    if model.jI_mode == "umbilic_derived":
        dt, dp = model.A_j.derivatives(sphere.theta_nodes, sphere.phi_nodes)
        ang = -np.stack([dt, dp], axis=1)
        jI = prof.values[:, None, None] * ang[None]
    else:
        jI = np.stack([model.jI(r, sphere) for r in nodes])

    resid = 0.0
    scale = 0.0
    for i in range(nodes.size):
        dpt = sphere.d_theta(p[i])
        dpp = sphere.d_phi(p[i])
        e = np.maximum(np.abs(dpt + 4.0 * np.pi * jI[i, :, 0]), np.abs(dpp + 4.0 * np.pi * jI[i, :, 1]))
        resid = max(resid, float(e.max()))
        scale = max(scale, float(np.abs(4.0 * np.pi * jI[i]).max()), float(np.abs(dpt).max()),
                    float(np.abs(dpp).max()))
    rel = resid / scale if scale > 0 else 0.0
    if rel > compat_tol:
        raise CompatibilityError(
            f"angular momentum incompatible with J_0: relative residual {rel:.3g} > {compat_tol:g}"
        )
    return UmbilicMomentumSolution(model, sphere, nodes, p, p[0].copy(), jI, resid, rel, prof)


# ---------------------------------------------------------------------------
# barriers and admissibility (general n as pure functions)


class Barriers:
    """Comparison barriers for ``omega`` (or ``omega / (1 + r^2)``).

    Parameters
    ----------
    nodes : ndarray
        Radial ladder starting at the base radius ``r0``.
    beta_env : callable
        ``tau -> (inf, sup)`` over the sphere of
        ``tau^(n-3) R / (n-1) - tau^(n-1) Rbar / (n-1)``.
    sig_env : callable
        Vectorized ``tau -> (sup, inf)`` of ``|sigma'|^2``.
    y_lo, y_hi : float
        ``min`` and ``max`` of the unknown at ``r0``.
    hyperbolic : bool
        Use the ``(1 + r^2)`` normalization of the Lambda < 0 case.
    """

    def __init__(self, nodes, beta_env, sig_env, y_lo, y_hi, n=3, hyperbolic=False, order=8):
        self.nodes = np.asarray(nodes, dtype=float)
        self.r0 = self.nodes[0]
        self.n = n
        self.hyperbolic = hyperbolic
        self.beta_env = beta_env
        self.sig_env = sig_env
        self.y_lo, self.y_hi = float(y_lo), float(y_hi)
        self._x, self._w = np.polynomial.legendre.leggauss(order)
        m = self.nodes.size
        self.A_hi = np.zeros(m)  # exponent built from sup |sigma'|^2
        self.A_lo = np.zeros(m)
        self.I_lo = np.zeros(m)
        self.I_hi = np.zeros(m)
        for i in range(1, m):
            a, b = self.nodes[i - 1], self.nodes[i]
            da_hi, da_lo, di_lo, di_hi = self._segment(i - 1, a, b)
            self.A_hi[i] = self.A_hi[i - 1] + da_hi
            self.A_lo[i] = self.A_lo[i - 1] + da_lo
            self.I_lo[i] = self.I_lo[i - 1] + di_lo
            self.I_hi[i] = self.I_hi[i - 1] + di_hi

    def _exponent_rate(self, tau):
        hi, lo = self.sig_env(tau)
        c = 4.0 * (self.n - 1)
        return tau * hi / c, tau * lo / c

    def _exponents(self, i, t):
        """``A_hi, A_lo`` at radii ``t`` inside the segment starting at node ``i``."""
        a = self.nodes[i]
        t = np.atleast_1d(np.asarray(t, dtype=float))
        half = 0.5 * (t - a)
        x = 0.5 * (t + a)[:, None] + half[:, None] * self._x
        rh, rl = self._exponent_rate(x)
        return (self.A_hi[i] + half * (rh @ self._w), self.A_lo[i] + half * (rl @ self._w))

    def _segment(self, i, a, b):
        half = 0.5 * (b - a)
        taus = 0.5 * (b + a) + half * self._x
        ah, al = self._exponents(i, taus)
        env = np.array([self.beta_env(t) for t in taus])
        da = self._exponents(i, np.array([b]))
        di_lo = half * np.dot(self._w, env[:, 0] * np.exp(ah))
        di_hi = half * np.dot(self._w, env[:, 1] * np.exp(al))
        return da[0][0] - self.A_hi[i], da[1][0] - self.A_lo[i], di_lo, di_hi

    def _locate(self, r):
        i = int(np.clip(np.searchsorted(self.nodes, r, side="right") - 1, 0, self.nodes.size - 2))
        return i

    def integrals(self, r):
        """``(A_hi, A_lo, I_lo, I_hi)`` at an arbitrary radius in range."""
        r = float(r)
        i = self._locate(r)
        if r == self.nodes[i]:
            return self.A_hi[i], self.A_lo[i], self.I_lo[i], self.I_hi[i]
        da_hi, da_lo, di_lo, di_hi = self._segment(i, self.nodes[i], r)
        return self.A_hi[i] + da_hi, self.A_lo[i] + da_lo, self.I_lo[i] + di_lo, self.I_hi[i] + di_hi

    def _denominator(self, r):
        d = r ** (self.n - 2)
        return d * (1.0 + r**2) if self.hyperbolic else d

    def _start_weight(self):
        w = self.r0 ** (self.n - 2)
        return w * (1.0 + self.r0**2) if self.hyperbolic else w

    def _from_integrals(self, r, A_hi, A_lo, I_lo, I_hi):
        w = self._start_weight()
        lo = (w * self.y_lo + I_lo) * np.exp(-A_hi) / self._denominator(r)
        hi = (w * self.y_hi + I_hi) * np.exp(-A_lo) / self._denominator(r)
        return lo, hi

    def at_nodes(self):
        return self._from_integrals(self.nodes, self.A_hi, self.A_lo, self.I_lo, self.I_hi)

    def __call__(self, r):
        return self._from_integrals(float(r), *self.integrals(r))

    def admissibility_constant(self, refine=True):
        """``K = sup_r -int_{r0}^r beta_inf exp(A_hi(tau)) dtau`` (A_hi(r0) = 0)."""
        phi = -self.I_lo
        j = int(np.argmax(phi))
        K = float(phi[j])
        if j == self.nodes.size - 1 and self.beta_env(self.nodes[-1])[0] < 0.0:
            raise NonConvergentSupError("admissibility integral still increasing at r_max")
        if refine and 0 < j:
            a = self.nodes[j - 1]
            b = self.nodes[min(j + 1, self.nodes.size - 1)]
            res = optimize.minimize_scalar(lambda t: self.integrals(t)[2], bounds=(a, b),
                                           method="bounded", options={"xatol": 1e-10 * b})
            K = max(K, float(-res.fun))
        return K if K > 0.0 else 0.0


def barrier_functions(nodes, beta_env, sig_env, y_lo, y_hi, n=3, hyperbolic=False) -> Barriers:
    """Barriers for any dimension ``n`` from envelope callables."""
    return Barriers(nodes, beta_env, sig_env, y_lo, y_hi, n=n, hyperbolic=hyperbolic)


def _beta_field(model, momentum, family, tau, n=3, mu_amp=None):
    """``tau^(n-3) R / (n-1) - tau^(n-1) Rbar / (n-1)`` on the sphere, with k = p."""
    R = family.scalar_curvature(tau)
    p = momentum.p_at(tau)
    if mu_amp is None:
        mu_amp = model.A_mu(family.grid.theta_nodes, family.grid.phi_nodes)
    mu = mu_amp * model.mu_radial(tau)
    rbar = 16.0 * np.pi * mu + 2.0 * model.Lambda - 2.0 * (n - 1) * p * p - (n - 1) * (n - 2) * p * p
    return tau ** (n - 3) * R / (n - 1) - tau ** (n - 1) * rbar / (n - 1)


def _envelopes(model, momentum, family):
    mu_amp = model.A_mu(family.grid.theta_nodes, family.grid.phi_nodes)

    def beta_env(tau):
        b = _beta_field(model, momentum, family, tau, mu_amp=mu_amp)
        return float(b.min()), float(b.max())

    bmax = float((family.beta**2).max()) if not family.is_round else 0.0
    bmin = float((family.beta**2).min()) if not family.is_round else 0.0

    def sig_env(tau):
        # |sigma'|^2 = 2 lambda^2 s^2 beta^2 with s the analytic weight
        w = 2.0 * (family.lam * family.weight(tau)) ** 2
        return w * bmax, w * bmin

    return beta_env, sig_env


def admissibility_K(model: MatterModel, momentum: UmbilicMomentumSolution,
                    family: MetricFamily, rgrid: RadialGrid) -> float:
    """Admissibility constant of the parabolicity window ``0 < phi < 1/sqrt(K)``."""
    _check_dimension(model, rgrid)
    beta_env, sig_env = _envelopes(model, momentum, family)
    return Barriers(rgrid.nodes, beta_env, sig_env, 0.0, 0.0).admissibility_constant()


def barrier_bounds(model, momentum, family, phi, rgrid, hyperbolic=None):
    """Lower and upper barriers at the radial nodes for initial lapse ``phi``."""
    _check_dimension(model, rgrid)
    hyperbolic = model.Lambda < 0 if hyperbolic is None else hyperbolic
    y0 = _initial_state(phi, family.grid, rgrid.r0, hyperbolic)
    beta_env, sig_env = _envelopes(model, momentum, family)
    bar = Barriers(rgrid.nodes, beta_env, sig_env, y0.min(), y0.max(), hyperbolic=hyperbolic)
    return bar.at_nodes()


def boundary_admissibility(model, momentum, family, rgrid):
    """Advisory check for generalized-horizon boundary data with p = k.

    Left side: ``inf_sphere 16 pi^2 (int_{r0}^inf J_0)^2 = inf p(r0)^2``.
    Right side: ``sup_t int_{r0}^t (8 pi tau^2 mu - R/2 - 3 tau^2 p^2)_inf
    exp(int_{r0}^tau s sup|sigma'|^2 / 8) dtau``.  Returns
    ``(verdict, lhs, rhs)``.
    """
    _check_dimension(model, rgrid)
    lhs = float(np.min(momentum.C**2))
    mu_amp = model.A_mu(family.grid.theta_nodes, family.grid.phi_nodes)

    def bracket_env(tau):
        R = family.scalar_curvature(tau)
        p = momentum.p_at(tau)
        b = 8.0 * np.pi * tau**2 * mu_amp * model.mu_radial(tau) - 0.5 * R - 3.0 * tau**2 * p * p
        v = float(b.min())
        return v, v

    _, sig_env = _envelopes(model, momentum, family)
    bar = Barriers(rgrid.nodes, bracket_env, sig_env, 0.0, 0.0)
    # reuse the lower integral: I_lo = int bracket_inf exp(A_hi)
    vals = bar.I_lo
    j = int(np.argmax(vals))
    rhs = float(max(vals[j], 0.0))
    if 0 < j:
        a, b = rgrid.nodes[j - 1], rgrid.nodes[min(j + 1, rgrid.nodes.size - 1)]
        res = optimize.minimize_scalar(lambda t: -bar.integrals(t)[2], bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-10 * b})
        rhs = max(rhs, float(-res.fun))
    return lhs > rhs, lhs, rhs


# ---------------------------------------------------------------------------
# parabolic march


def _initial_state(phi, sphere, r0, hyperbolic):
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (sphere.size,)).copy()
    if np.any(phi <= 0.0) or not np.all(np.isfinite(phi)):
        raise ParabolicityWindowError("initial lapse must be positive and finite")
    y = phi**-2
    return y / (1.0 + r0**2) if hyperbolic else y


class LapseProblem(IMEXProblem):
    """Split right-hand side of the ``omega`` equation on the sphere grid.

    Stiff part ``a(r) omega^-1 Lap omega``; explicit part the gradient,
    reaction and source terms.
    """

    def __init__(self, model, momentum, family: MetricFamily, hyperbolic=False, newton_tol=1e-13):
        self.model, self.momentum, self.family = model, momentum, family
        self.grid = family.grid
        self.hyperbolic = hyperbolic
        self.newton_tol = newton_tol
        self._cache = {}
        self._lu = None
        self._lu_key = None
        self.factorizations = 0
        wd = self.grid.weights
        self._mean_w = wd / wd.sum()
        self._mu_amp = model.A_mu(self.grid.theta_nodes, self.grid.phi_nodes)
        self._eye = sp.identity(self.grid.size, format="csc")

    def coefficients(self, r):
        c = self._cache.get(r)
        if c is not None:
            return c
        if len(self._cache) > 16:
            self._cache.clear()
        fam, model = self.family, self.model
        D = 1.0 + r * r if self.hyperbolic else 1.0
        sig2 = fam.derivative_norm(r)
        R = fam.scalar_curvature(r)
        p = self.momentum.p_at(r)
        rbar = 16.0 * np.pi * self._mu_amp * model.mu_radial(r) + 2.0 * model.Lambda - 6.0 * p * p
        react = 1.0 / r + r * sig2 / 8.0
        if self.hyperbolic:
            react = react + 2.0 * r / (1.0 + r * r)
        Sinv = None if fam.is_round else fam.cartesian_inverse(r)
        c = dict(
            a=1.0 / (2.0 * r * D),
            L=fam.laplacian_matrix(r),
            Sinv=Sinv,
            react=react,
            src=(R - rbar * r * r) / (2.0 * r * D),
        )
        self._cache[r] = c
        return c

    def _lap(self, c, y):
        v = c["L"] @ y
        return v - np.dot(self._mean_w, v)

    def implicit(self, r, y):
        c = self.coefficients(r)
        return c["a"] * self._lap(c, y) / y

    def explicit(self, r, y):
        c = self.coefficients(r)
        G = self.grid.gradient_matrices
        g = np.stack([G[0] @ y, G[1] @ y, G[2] @ y], axis=1)
        if c["Sinv"] is None:
            gn = np.einsum("na,na->n", g, g)
        else:
            gn = np.einsum("na,nab,nb->n", g, c["Sinv"], g)
        return -1.5 * c["a"] * gn / (y * y) - c["react"] * y + c["src"]

    def _factor(self, r, y, h):
        c = self.coefficients(r)
        Ly = c["L"] @ y
        J = sp.diags(1.0 / y) @ c["L"] - sp.diags(Ly / (y * y))
        self._lu = splu((self._eye - (h * c["a"]) * J).tocsc(), permc_spec="MMD_AT_PLUS_A")
        self._lu_key = h * c["a"]
        self.factorizations += 1

    def solve_stage(self, r, rhs, h, guess):
        c = self.coefficients(r)
        ha = h * c["a"]
        if self._lu is None or abs(ha - self._lu_key) > 0.2 * self._lu_key:
            self._factor(r, guess, h)
        Y = guess.copy()
        for attempt in range(2):
            prev = np.inf
            for _ in range(12):
                if np.any(Y <= 0.0):
                    raise ImplicitSolveFailed("nonpositive stage value")
                F = Y - h * self.implicit(r, Y) - rhs
                delta = self._lu.solve(-F)
                Y = Y + delta
                size = float(np.abs(delta).max())
                if size <= self.newton_tol * float(np.abs(Y).max()):
                    return Y
                if size > 0.5 * prev:
                    break
                prev = size
            # slow contraction: refresh the Jacobian at the current iterate
            if attempt == 0:
                Y = np.where(Y > 0.0, Y, guess)
                self._factor(r, Y, h)
        raise ImplicitSolveFailed("simplified Newton did not converge")

    def check_state(self, r, y):
        if not np.all(np.isfinite(y)) or np.any(y <= 0.0):
            raise ImplicitSolveFailed("nonpositive stage value")


@dataclass
class ParabolicRun:
    radii: np.ndarray
    omega: np.ndarray
    N: np.ndarray
    phi: np.ndarray
    K_admissible: float
    barrier_lo: np.ndarray
    barrier_hi: np.ndarray
    steps: np.ndarray
    hyperbolic: bool
    momentum: UmbilicMomentumSolution = field(repr=False)
    family: MetricFamily = field(repr=False)
    model: MatterModel = field(repr=False)
    rejected: int = 0

    @property
    def step_log(self):
        return self.steps[:, 5]

    @property
    def p(self):
        return self.momentum.p

    def barrier_violation(self):
        """Largest excursion of ``omega`` outside the barriers over accepted steps."""
        s = self.steps
        return float(max(np.max(s[:, 3] - s[:, 1]), np.max(s[:, 2] - s[:, 4]), 0.0))

    def steps_csv(self, path):
        header = "# radial-ids parabolic steps v1\nr,omega_min,omega_max,barrier_lo,barrier_hi,dr"
        np.savetxt(path, self.steps, delimiter=",", header=header, comments="", fmt="%.17g")

    def slice_csv(self, path, index=-1):
        g = self.family.grid
        table = np.column_stack([np.arange(g.size), g.theta_nodes, g.phi_nodes,
                                 self.N[index], self.momentum.p[index]])
        header = f"# radial-ids slice v1 r={self.radii[index]:.17g}\nnode,theta,phi,N,p"
        np.savetxt(path, table, delimiter=",", header=header, comments="",
                   fmt=["%d", "%.17g", "%.17g", "%.17g", "%.17g"])


def evolve_lapse(phi, model: MatterModel, momentum: UmbilicMomentumSolution, family: MetricFamily,
                 rgrid: RadialGrid, rtol=1e-9, atol=1e-12, max_ratio=0.01) -> ParabolicRun:
    """March the lapse from ``N(r0, .) = phi`` out to ``r_max``.

    ``phi`` is the lapse itself; when Lambda < 0 the window and barriers act
    on ``u = N sqrt(1 + r^2)``.
    """
    _check_dimension(model, rgrid)
    sphere = family.grid
    hyperbolic = model.Lambda < 0.0
    if hyperbolic and model.Lambda != HYPERBOLIC_LAMBDA:
        raise ValueError("Lambda < 0 runs use the normalization Lambda = -3")
    if not sphere.same_as(momentum.sphere):
        raise ValueError("momentum and family live on different sphere grids")
    y0 = _initial_state(phi, sphere, rgrid.r0, hyperbolic)
    phi_field = np.broadcast_to(np.asarray(phi, dtype=float), (sphere.size,)).copy()

    beta_env, sig_env = _envelopes(model, momentum, family)
    bar = Barriers(rgrid.nodes, beta_env, sig_env, y0.min(), y0.max(), hyperbolic=hyperbolic)
    K = bar.admissibility_constant()
    u0 = phi_field * np.sqrt(1.0 + rgrid.r0**2) if hyperbolic else phi_field
    if K > 0.0:
        window = rgrid.r0 ** 0.5 / np.sqrt(K)
        if u0.max() >= window:
            raise ParabolicityWindowError(
                f"initial data outside the parabolicity window: max phi = {u0.max():.6g} "
                f">= 1/sqrt(K) = {window:.6g} (K = {K:.6g})"
            )

    problem = LapseProblem(model, momentum, family, hyperbolic)
    rows = []

    def record(r, y, dr):
        if np.any(y <= 0.0):
            raise DegenerationError(f"omega reached {y.min():.3g} at r = {r:.6g}", radius=r)
        lo, hi = bar(r)
        rows.append((r, y.min(), y.max(), lo, hi, dr))

    lo0, hi0 = bar(rgrid.r0)
    rows.append((rgrid.r0, y0.min(), y0.max(), lo0, hi0, 0.0))
    omega, log = integrate(problem, y0, rgrid.nodes, rtol=rtol, atol=atol, max_ratio=max_ratio,
                           on_step=record)
    r = rgrid.nodes[:, None]
    N = omega**-0.5 / np.sqrt(1.0 + r**2) if hyperbolic else omega**-0.5
    lo, hi = bar.at_nodes()
    return ParabolicRun(rgrid.nodes.copy(), omega, N, phi_field, K, lo, hi, np.array(rows),
                        hyperbolic, momentum, family, model, log.rejected)
