"""Volume-preserving families of metrics sigma(r) on S^2.

A family is stored by its trace-free generator ``B`` in the orthonormal
round frame.  The metric at radius ``r`` is ``exp(s(r) B)`` in that frame
with ``s(r) = exp(-lambda (r - r0))``, so its determinant is exactly one.
"""

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import InvalidGeneratorError
from .sphere import SphereGrid, SphereMetric, laplacian_matrix, scalar_curvature


def _cheb_eval(coeffs, x):
    """Evaluate stacked Chebyshev coefficients ``(deg+1, ...)`` at scalar ``x``."""
    row = np.polynomial.chebyshev.chebvander(x, coeffs.shape[0] - 1)[0]
    return (row @ coeffs.reshape(coeffs.shape[0], -1)).reshape(coeffs.shape[1:])


class MetricFamily:
    """Radius-dependent metric on the sphere.

    Parameters
    ----------
    grid : SphereGrid
    B : ndarray, shape (N, 3)
        Frame components ``(b11, b12, b22)`` with ``b11 + b22 = 0``.
    lam : float
        Exponential decay rate of the perturbation.
    r0 : float
        Radius at which the perturbation has unit weight.
    kind : str
        ``"round"`` or ``"exp_perturbed"``.
    """

    def __init__(self, grid: SphereGrid, B, lam=1.0, r0=1.0, kind="exp_perturbed"):
        B = np.asarray(B, dtype=float)
        if B.shape != (grid.size, 3):
            raise InvalidGeneratorError("generator shape does not match the grid")
        scale = max(1.0, float(np.abs(B).max()))
        if np.abs(B[:, 0] + B[:, 2]).max() > 1e-12 * scale:
            raise InvalidGeneratorError("generator is not trace-free")
        if not lam > 0.0:
            raise InvalidGeneratorError("decay rate lambda must be positive")
        self.grid = grid
        self.B = B
        self.lam = float(lam)
        self.r0 = float(r0)
        self.kind = kind
        # eigenvalues of the frame generator are +-beta
        self.beta = np.hypot(B[:, 0], B[:, 1])
        self.is_round = kind == "round" or not np.any(B)
        self._curv = lru_cache(maxsize=64)(self._curvature_uncached)
        self._cheb = None
        self._lap_pattern = None
        self._lap_cheb = None
        self._inv_cheb = None

    def weight(self, r):
        return np.exp(-self.lam * (r - self.r0))

    def frame(self, r):
        """Frame components ``(g11, g12, g22)`` of sigma(r)."""
        if self.is_round:
            out = np.zeros((self.grid.size, 3))
            out[:, 0] = out[:, 2] = 1.0
            return out
        x = self.weight(r) * self.beta
        ch = np.cosh(x)
        # sinh(x)/beta with the beta -> 0 limit
        shb = self.weight(r) * np.sinc(1j * x / np.pi).real
        out = shb[:, None] * self.B
        out[:, 0] += ch
        out[:, 2] += ch
        return out

    def metric(self, r) -> SphereMetric:
        return SphereMetric(self.grid, self.frame(r))

    def derivative_frame(self, r):
        """Frame components of d sigma / dr, computed analytically."""
        if self.is_round:
            return np.zeros((self.grid.size, 3))
        ds = -self.lam * self.weight(r)
        g = self.frame(r)
        b11, b12, b22 = self.B.T
        g11, g12, g22 = g.T
        # product of the 2x2 symmetric matrices B and g (they commute)
        return ds * np.stack([b11 * g11 + b12 * g12, b11 * g12 + b12 * g22, b12 * g12 + b22 * g22], axis=1)

    def derivative_norm(self, r):
        """Pointwise ``|sigma'|^2_sigma = lambda^2 s^2 tr(B^2)``."""
        if self.is_round:
            return np.zeros(self.grid.size)
        s = self.weight(r)
        return (self.lam * s) ** 2 * 2.0 * self.beta**2

    def deviation(self, r):
        """Frame components of ``sigma(r) - round``."""
        out = self.frame(r)
        out[:, 0] -= 1.0
        out[:, 2] -= 1.0
        return out

    def _curvature_at_weight(self, s):
        return scalar_curvature(self.grid, SphereMetric(self.grid, self._frame_at_weight(s)))

    def _curvature_uncached(self, r):
        if self.is_round:
            return np.full(self.grid.size, 2.0)
        s = self.weight(r)
        if s > self._CHEB_RANGE:
            return scalar_curvature(self.grid, self.metric(r))
        if self._cheb is None:
            # R depends on r only through the analytic weight s; sample it
            # at Chebyshev points once and interpolate per node.
            k = np.arange(self._CHEB_POINTS)
            x = np.cos((k + 0.5) * np.pi / self._CHEB_POINTS)
            samples = np.array([self._curvature_at_weight(0.5 * self._CHEB_RANGE * (xi + 1.0)) for xi in x])
            self._cheb = np.polynomial.chebyshev.chebfit(x, samples, self._CHEB_POINTS - 1)
        return _cheb_eval(self._cheb, 2.0 * s / self._CHEB_RANGE - 1.0)

    _CHEB_POINTS = 14
    _CHEB_RANGE = 1.0

    def scalar_curvature(self, r):
        """``R(sigma(r))`` on the grid (cached per radius)."""
        return self._curv(float(r))

    def _chebyshev_samples(self):
        k = np.arange(self._CHEB_POINTS)
        x = np.cos((k + 0.5) * np.pi / self._CHEB_POINTS)
        return x, 0.5 * self._CHEB_RANGE * (x + 1.0)

    def _aligned_data(self, L):
        """Data of ``L`` scattered onto the fixed sparsity pattern."""
        P = self._lap_pattern
        L = L.tocoo()
        keys = L.row.astype(np.int64) * P.shape[1] + L.col
        pos = np.searchsorted(self._lap_keys, keys)
        data = np.zeros(P.nnz)
        np.add.at(data, pos, L.data)
        return data

    def laplacian_matrix(self, r):
        """Sparse local Laplace-Beltrami matrix of sigma(r).

        Like the curvature, the matrix entries depend on r only through the
        weight s; their values on a fixed sparsity pattern are interpolated
        in s.  The round matrix is built once.
        """
        if self._lap_pattern is None:
            G = self.grid.gradient_matrices
            rng = np.random.default_rng(0)
            # generic coefficients give the full structural pattern
            P = sum(G[a] @ sp.diags(rng.uniform(1.0, 2.0, self.grid.size)) @ G[b]
                    for a in range(3) for b in range(3)).tocsr()
            P.sort_indices()
            coo = P.tocoo()
            self._lap_pattern = P
            self._lap_keys = coo.row.astype(np.int64) * P.shape[1] + coo.col
            self._lap_rows, self._lap_cols = coo.row, coo.col
            if self.is_round:
                self._lap_round = self._aligned_data(laplacian_matrix(self.grid))
        s = self.weight(r)
        if self.is_round:
            data = self._lap_round
        elif s > self._CHEB_RANGE:
            data = self._aligned_data(laplacian_matrix(self.grid, self.metric(r)))
        else:
            if self._lap_cheb is None:
                x, sk = self._chebyshev_samples()
                samples = np.array([
                    self._aligned_data(laplacian_matrix(
                        self.grid, SphereMetric(self.grid, self._frame_at_weight(v))))
                    for v in sk
                ])
                self._lap_cheb = np.polynomial.chebyshev.chebfit(x, samples, self._CHEB_POINTS - 1)
            data = _cheb_eval(self._lap_cheb, 2.0 * s / self._CHEB_RANGE - 1.0)
        P = self._lap_pattern
        return sp.csr_matrix((data, P.indices, P.indptr), shape=P.shape)

    def cartesian_inverse(self, r):
        """Cartesian inverse metric ``(N, 3, 3)`` of sigma(r), interpolated in s."""
        s = self.weight(r)
        if self.is_round or s > self._CHEB_RANGE:
            return self.metric(r).cartesian_inverse
        if self._inv_cheb is None:
            x, sk = self._chebyshev_samples()
            samples = np.array([SphereMetric(self.grid, self._frame_at_weight(v)).cartesian_inverse
                                for v in sk])
            self._inv_cheb = np.polynomial.chebyshev.chebfit(
                x, samples.reshape(len(sk), -1), self._CHEB_POINTS - 1
            ).reshape((self._CHEB_POINTS,) + samples.shape[1:])
        return _cheb_eval(self._inv_cheb, 2.0 * s / self._CHEB_RANGE - 1.0)

    def _frame_at_weight(self, s):
        return self.frame(self.r0 - np.log(s) / self.lam) if s > 0 else self.frame(np.inf)


def round_family(grid: SphereGrid) -> MetricFamily:
    return MetricFamily(grid, np.zeros((grid.size, 3)), lam=1.0, r0=1.0, kind="round")


def exp_perturbed_family(grid: SphereGrid, B, lam, r0) -> MetricFamily:
    return MetricFamily(grid, B, lam=lam, r0=r0, kind="exp_perturbed")


def generator_at(M, theta, phi):
    """Trace-free tangent part of a constant symmetric 3x3 matrix.

    Returns frame components ``(b11, b12, b22)`` at the given points.  The
    result is a smooth tensor field on the sphere, poles included.
    """
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    et = np.stack([ct * cp, ct * sp, -st], axis=-1)
    ep = np.stack([-sp, cp, np.zeros_like(cp)], axis=-1)
    mtt = np.einsum("...a,ab,...b->...", et, M, et)
    mpp = np.einsum("...a,ab,...b->...", ep, M, ep)
    mtp = np.einsum("...a,ab,...b->...", et, M, ep)
    a = 0.5 * (mtt - mpp)
    return np.stack([a, mtp, -a], axis=-1)


def tangent_generator(grid: SphereGrid, M, amplitude=None):
    """Generator sampled on ``grid``; optionally rescaled to ``max|B| = amplitude``."""
    B = generator_at(M, grid.theta_nodes, grid.phi_nodes)
    if amplitude is not None:
        peak = np.abs(B).max()
        if peak == 0.0:
            raise InvalidGeneratorError("matrix has no trace-free tangent part")
        B = B * (amplitude / peak)
    return B


def load_generator(path, grid: SphereGrid):
    """Read a generator table with columns: node index, b11, b12, b22."""
    table = np.loadtxt(path, ndmin=2)
    if table.shape[1] != 4:
        raise InvalidGeneratorError("generator table needs 4 columns")
    idx = table[:, 0].astype(int)
    if idx.size != grid.size or np.any(np.sort(idx) != np.arange(grid.size)):
        raise InvalidGeneratorError(
            f"generator table must list each of the {grid.size} nodes once"
        )
    B = np.empty((grid.size, 3))
    B[idx] = table[:, 1:]
    return B


def save_generator(path, B):
    B = np.asarray(B, dtype=float)
    table = np.column_stack([np.arange(B.shape[0]), B])
    np.savetxt(path, table, fmt=["%d", "%.17g", "%.17g", "%.17g"])
