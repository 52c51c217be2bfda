"""Latitude-longitude discretization of the unit 2-sphere.

Fields are stored as flat arrays with one value per node, theta-major.
Derivatives are taken on the Cartesian components of tensors in R^3,
which are smooth scalar functions on the sphere.  This keeps the
centered differences second-order accurate up to the rings adjacent
to the poles, where the polar chart itself is singular.
"""

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateMetricError, GridMismatchError, ResolutionTooSmallError

FOUR_PI = 4.0 * np.pi


def _fejer_weights(n):
    """Fejer's first rule on x = cos(theta) at midpoint colatitudes."""
    theta = (np.arange(n) + 0.5) * np.pi / n
    j = np.arange(1, n // 2 + 1)
    s = np.cos(2.0 * np.outer(theta, j)) / (4.0 * j**2 - 1.0)
    return (2.0 / n) * (1.0 - 2.0 * s.sum(axis=1))


class SphereGrid:
    """Equiangular grid on S^2 with no nodes on the poles.

    Parameters
    ----------
    n_theta, n_phi : int
        Number of colatitude rows and longitude columns.  ``n_phi`` must be
        even so that the reflection across a pole lands on a grid column.

    Notes
    -----
    Colatitudes are ``(i + 1/2) pi / n_theta`` and longitudes ``2 pi j / n_phi``.
    Weights combine Fejer's rule in ``cos(theta)`` with the trapezoidal rule in
    ``phi``; they are positive and sum to ``4 pi``.
    """

    def __init__(self, n_theta: int, n_phi: int):
        if n_theta < 8 or n_phi < 8:
            raise ResolutionTooSmallError(
                f"grid {n_theta}x{n_phi} below the 8x8 minimum"
            )
        if n_phi % 2:
            raise ResolutionTooSmallError("n_phi must be even for pole reflection")
        self.n_theta = int(n_theta)
        self.n_phi = int(n_phi)
        self.h_theta = np.pi / n_theta
        self.h_phi = 2.0 * np.pi / n_phi
        self.theta = (np.arange(n_theta) + 0.5) * self.h_theta
        self.phi = np.arange(n_phi) * self.h_phi

        th, ph = np.meshgrid(self.theta, self.phi, indexing="ij")
        self.theta_nodes = th.ravel()
        self.phi_nodes = ph.ravel()
        st, ct = np.sin(self.theta_nodes), np.cos(self.theta_nodes)
        sp_, cp = np.sin(self.phi_nodes), np.cos(self.phi_nodes)
        self.sin_theta = st
        self.cos_theta = ct
        self.normal = np.stack([st * cp, st * sp_, ct], axis=1)
        self.e_theta = np.stack([ct * cp, ct * sp_, -st], axis=1)
        self.e_phi = np.stack([-sp_, cp, np.zeros_like(cp)], axis=1)
        self.projector = np.eye(3)[None] - self.normal[:, :, None] * self.normal[:, None, :]

        w_theta = _fejer_weights(n_theta)
        self.weights = np.repeat(w_theta * self.h_phi, n_phi)

    @property
    def size(self):
        return self.n_theta * self.n_phi

    @property
    def shape(self):
        return (self.n_theta, self.n_phi)

    @property
    def nodes(self):
        return np.stack([self.theta_nodes, self.phi_nodes], axis=1)

    def same_as(self, other):
        return (
            isinstance(other, SphereGrid)
            and other.n_theta == self.n_theta
            and other.n_phi == self.n_phi
        )

    def check_field(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.size:
            raise GridMismatchError(
                f"field has {values.shape[0]} values, grid has {self.size} nodes"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        return values

    def evaluate(self, func):
        """Sample ``func(theta, phi)`` at the nodes."""
        return np.asarray(func(self.theta_nodes, self.phi_nodes), dtype=float) * np.ones(self.size)

    # -- finite differences -------------------------------------------------

    def _view(self, f):
        return f.reshape((self.n_theta, self.n_phi) + f.shape[1:])

    def d_theta(self, f, parity=1.0):
        """Centered theta derivative with ghost rows across the poles.

        The ghost value at colatitude ``-theta`` is the node value at
        ``(theta, phi + pi)`` times ``parity`` (+1 for scalars and Cartesian
        components, -1 for theta-components of covectors).
        """
        F = self._view(np.asarray(f, dtype=float))
        half = self.n_phi // 2
        top = parity * np.roll(F[0], half, axis=0)
        bottom = parity * np.roll(F[-1], half, axis=0)
        ext = np.concatenate([top[None], F, bottom[None]], axis=0)
        return ((ext[2:] - ext[:-2]) / (2.0 * self.h_theta)).reshape(np.shape(f))

    def d_phi(self, f):
        F = self._view(np.asarray(f, dtype=float))
        D = (np.roll(F, -1, axis=1) - np.roll(F, 1, axis=1)) / (2.0 * self.h_phi)
        return D.reshape(np.shape(f))

    def _bcast(self, a, ndim):
        return a.reshape(a.shape[:1] + (1,) * (ndim - 1) + a.shape[1:])

    def gradient(self, f):
        """Tangential gradient on the unit sphere in Cartesian components.

        ``f`` has shape ``(N, ...)``; the result has shape ``(N, ..., 3)``.
        """
        f = np.asarray(f, dtype=float)
        ft = self.d_theta(f)[..., None]
        fp = (self.d_phi(f) / self._bcast(self.sin_theta, f.ndim))[..., None]
        return ft * self._bcast(self.e_theta, f.ndim) + fp * self._bcast(self.e_phi, f.ndim)

    @cached_property
    def d_theta_matrix(self):
        nt, nph = self.shape
        half = nph // 2
        idx = np.arange(self.size).reshape(nt, nph)
        rows, cols, vals = [], [], []
        c = 1.0 / (2.0 * self.h_theta)
        for i in range(nt):
            for sgn, ii in ((1.0, i + 1), (-1.0, i - 1)):
                if 0 <= ii < nt:
                    target = idx[ii]
                else:
                    target = np.roll(idx[i], -half)
                rows.append(idx[i])
                cols.append(target)
                vals.append(np.full(nph, sgn * c))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.size, self.size),
        )

    @cached_property
    def d_phi_matrix(self):
        nt, nph = self.shape
        idx = np.arange(self.size).reshape(nt, nph)
        c = 1.0 / (2.0 * self.h_phi)
        rows = np.concatenate([idx.ravel(), idx.ravel()])
        cols = np.concatenate([np.roll(idx, -1, axis=1).ravel(), np.roll(idx, 1, axis=1).ravel()])
        vals = np.concatenate([np.full(self.size, c), np.full(self.size, -c)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))

    @cached_property
    def gradient_matrices(self):
        """Sparse matrices ``G[a]`` with ``G[a] @ f == gradient(f)[:, a]``."""
        out = []
        for a in range(3):
            out.append(
                (
                    sp.diags(self.e_theta[:, a]) @ self.d_theta_matrix
                    + sp.diags(self.e_phi[:, a] / self.sin_theta) @ self.d_phi_matrix
                ).tocsr()
            )
        return out

    def pole_values(self, f):
        """Mean of the rings adjacent to the north and south poles."""
        F = self._view(np.asarray(f, dtype=float))
        return F[0].mean(axis=0), F[-1].mean(axis=0)


def build_grid(n_theta: int, n_phi: int) -> SphereGrid:
    return SphereGrid(n_theta, n_phi)


class SphereMetric:
    """Riemannian metric on S^2 given by its components in the round frame.

    Parameters
    ----------
    grid : SphereGrid
    frame : ndarray, shape (N, 3)
        ``(g11, g12, g22)`` in the orthonormal frame ``(e_theta, e_phi / sin)``
        of the unit round metric.  Coordinate components follow as
        ``s_tt = g11``, ``s_tp = sin(theta) g12``, ``s_pp = sin(theta)^2 g22``.
    """

    def __init__(self, grid: SphereGrid, frame):
        frame = np.asarray(frame, dtype=float)
        if frame.shape != (grid.size, 3):
            raise GridMismatchError("metric frame components do not match the grid")
        det = frame[:, 0] * frame[:, 2] - frame[:, 1] ** 2
        if np.any(~np.isfinite(det)) or np.any(det <= 0.0) or np.any(frame[:, 0] <= 0.0):
            bad = int(np.argmin(np.where(np.isfinite(det), det, -np.inf)))
            raise DegenerateMetricError(
                f"metric not positive definite at node {bad} (det={det[bad]:.3e})"
            )
        self.grid = grid
        self.frame = frame
        self.det = det

    @classmethod
    def round(cls, grid):
        frame = np.zeros((grid.size, 3))
        frame[:, 0] = 1.0
        frame[:, 2] = 1.0
        return cls(grid, frame)

    @classmethod
    def scaled_round(cls, grid, c):
        frame = np.zeros((grid.size, 3))
        frame[:, 0] = c * c
        frame[:, 2] = c * c
        return cls(grid, frame)

    @classmethod
    def from_coordinates(cls, grid, s_tt, s_tp, s_pp):
        st = grid.sin_theta
        return cls(grid, np.stack([s_tt, s_tp / st, s_pp / st**2], axis=1))

    @property
    def density(self):
        """Ratio of the area form to the round one."""
        return np.sqrt(self.det)

    def coordinates(self):
        st = self.grid.sin_theta
        return self.frame[:, 0], st * self.frame[:, 1], st**2 * self.frame[:, 2]

    def inverse_frame(self):
        g11, g12, g22 = self.frame.T
        return np.stack([g22, -g12, g11], axis=1) / self.det[:, None]

    @staticmethod
    def _to_cartesian(grid, comps):
        a, b, c = comps.T
        et, ep = grid.e_theta, grid.e_phi
        return (
            a[:, None, None] * et[:, :, None] * et[:, None, :]
            + b[:, None, None] * (et[:, :, None] * ep[:, None, :] + ep[:, :, None] * et[:, None, :])
            + c[:, None, None] * ep[:, :, None] * ep[:, None, :]
        )

    @cached_property
    def cartesian(self):
        return self._to_cartesian(self.grid, self.frame)

    @cached_property
    def cartesian_inverse(self):
        """Inverse on the tangent planes, zero along the normal."""
        return self._to_cartesian(self.grid, self.inverse_frame())


def _check_metric(grid, metric):
    if metric is None:
        return SphereMetric.round(grid)
    if not grid.same_as(metric.grid):
        raise GridMismatchError("field and metric live on different grids")
    return metric


def integrate(grid: SphereGrid, field, metric=None) -> float:
    """Integral of a node field against the area form of ``metric``."""
    field = grid.check_field(field)
    metric = _check_metric(grid, metric)
    return float(np.dot(grid.weights * metric.density, field))


def gradient_norm_sq(grid, field, metric=None):
    """Pointwise ``|grad f|^2`` measured in ``metric``."""
    metric = _check_metric(grid, metric)
    g = grid.gradient(field)
    return np.einsum("na,nab,nb->n", g, metric.cartesian_inverse, g)


def _mean_free(grid, values, metric):
    wd = grid.weights * metric.density
    return values - np.dot(wd, values) / wd.sum()


def laplace_beltrami(grid: SphereGrid, field, metric=None, conservative=True):
    """Laplace-Beltrami operator in divergence form.

    Evaluates ``(1/d) div_round(d * sigma^{-1} grad f)`` with ``d`` the area
    density of ``metric`` relative to the round sphere.  With
    ``conservative=True`` the weighted mean of the result is removed, which
    makes the discrete divergence theorem exact; the removed constant is
    of the size of the truncation error.
    """
    field = grid.check_field(field)
    metric = _check_metric(grid, metric)
    d = metric.density
    flux = np.einsum("nab,nb->na", metric.cartesian_inverse, grid.gradient(field)) * d[:, None]
    lap = np.einsum("naa->n", grid.gradient(flux)) / d
    if conservative:
        lap = _mean_free(grid, lap, metric)
    return lap


def laplacian_matrix(grid: SphereGrid, metric=None):
    """Sparse matrix of the local part of :func:`laplace_beltrami`.

    The mean projection is a rank-one correction and is left out.
    """
    metric = _check_metric(grid, metric)
    G = grid.gradient_matrices
    Sinv = metric.cartesian_inverse
    d = metric.density
    L = None
    for a in range(3):
        inner = sp.diags(d * Sinv[:, a, 0]) @ G[0]
        inner = inner + sp.diags(d * Sinv[:, a, 1]) @ G[1] + sp.diags(d * Sinv[:, a, 2]) @ G[2]
        term = G[a] @ inner
        L = term if L is None else L + term
    return (sp.diags(1.0 / d) @ L).tocsr()


def _project(grid, T, axes):
    """Apply the tangent projector on the listed tensor axes (1-based after node)."""
    P = grid.projector
    for ax in axes:
        T = np.moveaxis(np.einsum("nab,n...b->n...a", P, np.moveaxis(T, ax, -1)), -1, ax)
    return T


def scalar_curvature(grid: SphereGrid, metric=None, gauss_bonnet=True):
    """Scalar curvature ``R`` of a metric on S^2 (twice the Gauss curvature).

    The connection is written as the round one plus a tangent difference
    tensor ``C``; derivatives of ``C`` use projected Cartesian gradients.  The
    pure-trace part of the metric that is constant is handled exactly, so the
    round sphere and its constant rescalings are reproduced to rounding.
    With ``gauss_bonnet=True`` a constant is added so that the discrete
    integral equals ``8 pi`` exactly; the shift is of truncation-error size.
    """
    metric = _check_metric(grid, metric)
    P = grid.projector
    Sinv = metric.cartesian_inverse
    g11, g12, g22 = metric.frame.T
    psi = 0.5 * (g11 + g22) - 1.0
    tf = np.stack([0.5 * (g11 - g22), g12, 0.5 * (g22 - g11)], axis=1)
    E_tf = SphereMetric._to_cartesian(grid, tf)

    # DS[n, m, i, j] = round covariant derivative along m of S_ij
    dpsi = grid.gradient(psi)
    dE = np.moveaxis(grid.gradient(E_tf), -1, 1)
    DS = dpsi[:, :, None, None] * P[:, None, :, :] + _project(grid, dE, (2, 3))

    # C[n, k, i, j] = 1/2 S^{kl} (D_i S_jl + D_j S_il - D_l S_ij)
    T = np.einsum("nijl->nlij", DS) + np.einsum("njil->nlij", DS) - DS
    C = 0.5 * np.einsum("nkl,nlij->nkij", Sinv, T)

    dC = grid.gradient(C)  # (n, k, i, j, m)
    dC = _project(grid, dC, (1, 2, 3))
    div_C = np.einsum("nkijk->nij", dC)
    d_trace = np.einsum("nkkij->nij", dC)
    ric = (
        P
        + div_C
        - d_trace
        + np.einsum("nkkl,nlij->nij", C, C)
        - np.einsum("nkjl,nlki->nij", C, C)
    )
    R = np.einsum("nij,nij->n", Sinv, ric)
    if gauss_bonnet:
        wd = grid.weights * metric.density
        R = R + (2.0 * FOUR_PI - np.dot(wd, R)) / wd.sum()
    return R


def gauss_curvature(grid: SphereGrid, metric=None, gauss_bonnet=True):
    return 0.5 * scalar_curvature(grid, metric, gauss_bonnet)
