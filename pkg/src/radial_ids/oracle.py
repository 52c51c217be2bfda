"""Independent check of sampled data against the raw constraint equations.

The oracle consumes only field samples ``(N, k, p, sigma)`` on the radial
nodes and the sphere grid.  It differentiates the chart components of
``g = N^2 dr^2 + r^2 sigma`` and ``K = k N^2 dr^2 + p r^2 sigma`` in the
``(r, theta, phi)`` chart and evaluates

    16 pi mu = R(g) - 2 Lambda + (tr K)^2 - |K|^2
    8 pi J   = div(K - (tr K) g)

directly.  The same samples are also pushed through the reduced leafwise
system (the "lemma" route) so the two can be compared on arbitrary smooth,
non-solution data.

Chart stencils lose accuracy near the poles (inverse metric ~ 1/sin^2), so
norms are taken over a colatitude band.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GridTooCoarseError

BAND_COS = 0.6


def fd_weights(x0, x, m):
    """Finite-difference weights for the ``m``-th derivative at ``x0`` (Fornberg)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def radial_stencil(radii, i):
    """Node indices and weights for first and second radial derivatives at node ``i``.

    Central three-point stencils in the interior, one-sided second order at
    both ends (three points for the first, four for the second derivative).
    """
    n = radii.size
    if n < 4:
        raise GridTooCoarseError("the oracle needs at least 4 radial nodes")
    if 0 < i < n - 1:
        idx1 = idx2 = np.array([i - 1, i, i + 1])
    elif i == 0:
        idx1, idx2 = np.arange(3), np.arange(4)
    else:
        idx1, idx2 = np.arange(n - 3, n), np.arange(n - 4, n)
    w1 = fd_weights(radii[i], radii[idx1], 1)
    w2 = fd_weights(radii[i], radii[idx2], 2)
    return idx1, w1, idx2, w2


class _AngularFD:
    """Second-order chart differences on the (theta, phi) lattice.

    Ghost rows beyond each pole are the first/last row shifted by half a
    turn in phi, times the component parity (-1 per theta index).
    """

    def __init__(self, n_theta, n_phi):
        if n_theta < 4 or n_phi < 4 or n_phi % 2:
            raise GridTooCoarseError("angular grid too coarse for the oracle stencils")
        self.n_theta, self.n_phi = n_theta, n_phi
        self.h_t = np.pi / n_theta
        self.h_p = 2.0 * np.pi / n_phi

    def _ext(self, f, parity):
        half = self.n_phi // 2
        top = parity * np.roll(f[..., :1, :], half, axis=-1)
        bot = parity * np.roll(f[..., -1:, :], half, axis=-1)
        return np.concatenate([top, f, bot], axis=-2)

    def dt(self, f, parity):
        e = self._ext(f, parity)
        return (e[..., 2:, :] - e[..., :-2, :]) / (2.0 * self.h_t)

    def dtt(self, f, parity):
        e = self._ext(f, parity)
        return (e[..., 2:, :] - 2.0 * f + e[..., :-2, :]) / self.h_t**2

    def dp(self, f):
        return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2.0 * self.h_p)

    def dpp(self, f):
        return (np.roll(f, -1, axis=-1) - 2.0 * f + np.roll(f, 1, axis=-1)) / self.h_p**2


def _parity(dim, a, b):
    # index 0 of a 3D chart is r; the theta index is dim - 2
    t = dim - 2
    return (-1.0) ** ((a == t) + (b == t))


def _chart_derivatives(fd, comps, dcomps_r=None, ddcomps_r=None):
    """First and second chart derivatives of symmetric tensor components.

    ``comps`` has shape ``(d, d, n_theta, n_phi)``.  For ``d = 3`` the radial
    derivatives come in precomputed; for ``d = 2`` the chart is ``(theta, phi)``.
    Returns ``dg[c, a, b]`` and ``ddg[c, e, a, b]``.
    """
    d = comps.shape[0]
    shp = comps.shape[2:]
    dg = np.zeros((d, d, d) + shp)
    ddg = np.zeros((d, d, d, d) + shp)
    t, p = d - 2, d - 1
    for a in range(d):
        for b in range(a, d):
            s = _parity(d, a, b)
            f = comps[a, b]
            ft = fd.dt(f, s)
            fp = fd.dp(f)
            dg[t, a, b], dg[p, a, b] = ft, fp
            ddg[t, t, a, b] = fd.dtt(f, s)
            ddg[p, p, a, b] = fd.dpp(f)
            ddg[t, p, a, b] = ddg[p, t, a, b] = fd.dp(ft)
            if d == 3:
                fr = dcomps_r[a, b]
                dg[0, a, b] = fr
                ddg[0, 0, a, b] = ddcomps_r[a, b]
                ddg[0, t, a, b] = ddg[t, 0, a, b] = fd.dt(fr, s)
                ddg[0, p, a, b] = ddg[p, 0, a, b] = fd.dp(fr)
            if b != a:
                dg[:, b, a] = dg[:, a, b]
                ddg[:, :, b, a] = ddg[:, :, a, b]
    return dg, ddg


def _point_first(a, ncomp):
    """Move the leading ``ncomp`` component axes behind a flattened point axis."""
    shp = a.shape[:ncomp]
    return np.moveaxis(a.reshape(shp + (-1,)), -1, 0)


def scalar_curvature_chart(comps, dg, ddg):
    """Scalar curvature from chart components and their first/second derivatives.

    Inputs are component-first (``comps[a, b]``, ``dg[c, a, b]``,
    ``ddg[c, e, a, b]`` over the lattice).  Returns ``R`` on the lattice plus the
    point-first inverse metric ``(P, d, d)`` and Christoffel symbols
    ``(P, d, d, d)``.
    """
    d = comps.shape[0]
    lattice = comps.shape[2:]
    g = _point_first(comps, 2)
    dg = _point_first(dg, 3)
    ddg = _point_first(ddg, 4)
    P = g.shape[0]
    ginv = np.linalg.inv(g)
    # low[d, b, c] = Gamma_{dbc}
    low = 0.5 * (dg.transpose(0, 2, 1, 3) + dg.transpose(0, 2, 3, 1) - dg)
    gam = (ginv @ low.reshape(P, d, d * d)).reshape(P, d, d, d)
    dlow = 0.5 * (ddg.transpose(0, 1, 3, 2, 4) + ddg.transpose(0, 1, 3, 4, 2) - ddg)
    dginv = -ginv[:, None] @ dg @ ginv[:, None]
    dgam = (dginv @ low.reshape(P, 1, d, d * d) + ginv[:, None] @ dlow.reshape(P, d, d, d * d))
    dgam = dgam.reshape(P, d, d, d, d)
    ric = (np.einsum("pccab->pab", dgam) - np.einsum("pbcac->pab", dgam)
           + np.einsum("pd,pdab->pab", np.einsum("pccd->pd", gam), gam)
           - np.einsum("pcbd,pdac->pab", gam, gam))
    R = np.einsum("pab,pab->p", ginv, ric)
    return R.reshape(lattice), ginv, gam


def _sigma_coords(family, r, shape):
    s_tt, s_tp, s_pp = family.metric(r).coordinates()
    out = np.empty((2, 2) + shape)
    out[0, 0] = s_tt.reshape(shape)
    out[0, 1] = out[1, 0] = s_tp.reshape(shape)
    out[1, 1] = s_pp.reshape(shape)
    return out


def _round_coords(sph, shape):
    out = np.zeros((2, 2) + shape)
    out[0, 0] = 1.0
    out[1, 1] = (sph.sin_theta**2).reshape(shape)
    return out


@dataclass
class LeafEvaluation:
    """Implied matter and curvature on one leaf by both routes (lattice-shaped arrays)."""

    r: float
    mu_raw: np.ndarray
    j_raw: np.ndarray
    mu_lemma: np.ndarray
    j_lemma: np.ndarray
    R_raw: np.ndarray
    R_block: np.ndarray


def _chart_metric(r, sigma, lapse_sq):
    g = np.zeros((3, 3) + sigma.shape[2:])
    g[0, 0] = lapse_sq
    g[1:, 1:] = r**2 * sigma
    return g


def evaluate_leaf(data, i, lemma=True):
    """Raw-constraint and leafwise-system evaluation at radial node ``i``.

    ``j_raw``/``j_lemma`` stack the chart components ``(J_r, J_theta, J_phi)``.
    Curvatures are differenced against the flat (resp. round) chart metric
    on the same stencils, so flat data is reproduced to rounding.
    """
    sph = data.sphere
    shape = (sph.n_theta, sph.n_phi)
    fd = _AngularFD(*shape)
    radii = data.radii
    idx1, w1, idx2, w2 = radial_stencil(radii, i)
    n = data.n
    Lam = data.Lambda
    nodes = np.union1d(idx1, idx2)
    rnd = _round_coords(sph, shape)

    G, Kc, sig, G0 = {}, {}, {}, {}
    for j in nodes:
        r = radii[j]
        invN = data.inv_N[j].reshape(shape)
        if np.any(invN <= 0.0):
            raise GridTooCoarseError(f"lapse not finite in the stencil of r = {radii[i]:.6g}")
        s = _sigma_coords(data.family, r, shape)
        g = _chart_metric(r, s, invN**-2)
        K = np.zeros_like(g)
        K[0, 0] = data.k[j].reshape(shape) * g[0, 0]
        K[1:, 1:] = data.p[j].reshape(shape) * g[1:, 1:]
        G[j], Kc[j], sig[j] = g, K, s
        G0[j] = _chart_metric(r, rnd, 1.0)

    def rd(store, idx, w):
        return sum(wk * store[j] for j, wk in zip(idx, w))

    g = G[i]
    dg, ddg = _chart_derivatives(fd, g, rd(G, idx1, w1), rd(G, idx2, w2))
    R_fd, ginv, gam = scalar_curvature_chart(g, dg, ddg)
    dg0, ddg0 = _chart_derivatives(fd, G0[i], rd(G0, idx1, w1), rd(G0, idx2, w2))
    R_raw = R_fd - scalar_curvature_chart(G0[i], dg0, ddg0)[0]

    K = Kc[i]
    dK = np.zeros((3, 3, 3) + shape)
    dK[0] = rd(Kc, idx1, w1)
    for a in range(3):
        for b in range(3):
            s = _parity(3, a, b)
            dK[1, a, b] = fd.dt(K[a, b], s)
            dK[2, a, b] = fd.dp(K[a, b])
    Kp = _point_first(K, 2)
    dKp = _point_first(dK, 3)
    trK = np.einsum("pab,pab->p", ginv, Kp)
    KK = ginv @ Kp
    normK = np.einsum("pab,pba->p", KK, KK)
    mu_raw = (R_raw.ravel() - 2.0 * Lam + trK**2 - normK) / (16.0 * np.pi)
    # div(K)_b = g^{ac} (d_c K_ab - Gamma^d_ca K_db - Gamma^d_cb K_ad)
    covK = (dKp - np.einsum("pdca,pdb->pcab", gam, Kp) - np.einsum("pdcb,pad->pcab", gam, Kp))
    divK = np.einsum("pac,pcab->pb", ginv, covK)
    trK_l = trK.reshape(shape)
    tr_nodes = {j: np.einsum("pab,pab->p", np.linalg.inv(_point_first(G[j], 2)),
                             _point_first(Kc[j], 2)).reshape(shape) for j in idx1}
    dtr = np.stack([rd(tr_nodes, idx1, w1), fd.dt(trK_l, 1.0), fd.dp(trK_l)])
    j_raw = (divK.T.reshape((3,) + shape) - dtr) / (8.0 * np.pi)
    mu_raw = mu_raw.reshape(shape)

    if not lemma:
        return LeafEvaluation(radii[i], mu_raw, j_raw, None, None, R_raw, None)

    r = radii[i]
    N = 1.0 / data.inv_N[i].reshape(shape)
    k = data.k[i].reshape(shape)
    p = data.p[i].reshape(shape)
    Nst = {j: 1.0 / data.inv_N[j].reshape(shape) for j in nodes}
    pst = {j: data.p[j].reshape(shape) for j in nodes}
    N_r = rd(Nst, idx1, w1)
    p_r = rd(pst, idx1, w1)
    s = sig[i]
    ds, dds = _chart_derivatives(fd, s)
    R_s, sinv, sgam = scalar_curvature_chart(s, ds, dds)
    dr0, ddr0 = _chart_derivatives(fd, rnd)
    R_sigma = R_s - scalar_curvature_chart(rnd, dr0, ddr0)[0] + 2.0
    Nt = fd.dt(N, 1.0)
    dN = np.stack([Nt, fd.dp(N)])
    hessN = np.stack([np.stack([fd.dtt(N, 1.0), fd.dp(Nt)]), np.stack([fd.dp(Nt), fd.dpp(N)])])
    hess_p = _point_first(hessN, 2) - np.einsum("pkij,pk->pij", sgam, _point_first(dN, 1))
    lapN = np.einsum("pij,pij->p", sinv, hess_p).reshape(shape)
    s_r = _point_first(rd(sig, idx1, w1), 2)
    A = sinv @ s_r
    sig_norm = np.einsum("pij,pji->p", A, A).reshape(shape)
    R_block = (2.0 / (r**2 * N)) * (-lapN + 0.5 * R_sigma * N) + N**-2 * (
        2.0 * (n - 1) * N_r / (r * N) - (n - 1) * (n - 2) / r**2 - 0.25 * sig_norm)
    mu_lemma = (R_block - 2.0 * Lam + 2.0 * (n - 1) * k * p + (n - 1) * (n - 2) * p**2) / (16.0 * np.pi)
    j0 = ((n - 1) * (k - p) / r - (n - 1) * p_r) / (8.0 * np.pi)
    dp_ = np.stack([fd.dt(p, 1.0), fd.dp(p)])
    dk = np.stack([fd.dt(k, 1.0), fd.dp(k)])
    jI = ((p - k) * dN / N - (n - 2) * dp_ - dk) / (8.0 * np.pi)
    j_lemma = np.concatenate([j0[None], jI])
    return LeafEvaluation(r, mu_raw, j_raw, mu_lemma, j_lemma, R_raw, R_block)


def band_mask(sphere, band_cos=BAND_COS):
    return np.abs(sphere.cos_theta) <= band_cos


@dataclass
class ResidualField:
    """Constraint residuals (raw route minus prescribed matter) per evaluated radius.

    Arrays are ``(n_eval, N_sphere)``; ``jI_residuals`` has a trailing axis of 2.
    Norms are taken over the colatitude band ``|cos theta| <= band_cos``.
    """

    radii: np.ndarray
    mu_residual: np.ndarray
    j0_residual: np.ndarray
    jI_residuals: np.ndarray
    band: np.ndarray
    lemma_mu: np.ndarray = None
    lemma_j: np.ndarray = None
    curvature_gap: np.ndarray = None
    convergence_order: float = None
    meta: dict = field(default_factory=dict)

    def _norms(self, arr, weights):
        a = arr[:, self.band] if arr.ndim == 2 else arr[:, self.band, :]
        flat = np.abs(a).reshape(a.shape[0], -1) if arr.ndim == 2 else np.linalg.norm(a, axis=-1)
        w = weights[self.band]
        return flat.max(axis=1), np.sqrt((flat**2 * w).sum(axis=1) / w.sum())

    def norms(self, weights):
        """Per-radius ``(max, L2)`` for the mu, J_0 and J_I residuals."""
        return {name: self._norms(getattr(self, name), weights)
                for name in ("mu_residual", "j0_residual", "jI_residuals")}

    def max_norm(self):
        b = self.band
        return max(float(np.abs(self.mu_residual[:, b]).max()), float(np.abs(self.j0_residual[:, b]).max()),
                   float(np.abs(self.jI_residuals[:, b, :]).max()))

    def lemma_discrepancy(self):
        """Max relative mismatch of the two routes' implied ``(mu, J)``."""
        if self.lemma_mu is None:
            return None
        b = self.band
        mu_a, mu_b = self.lemma_mu
        j_a, j_b = self.lemma_j
        dmu = np.abs(mu_a[:, b] - mu_b[:, b]).max() / max(np.abs(mu_a[:, b]).max(), 1e-300)
        dj = np.abs(j_a[:, :, b] - j_b[:, :, b]).max() / max(np.abs(j_a[:, :, b]).max(), 1e-300)
        return float(max(dmu, dj))

    def summary(self, weights):
        out = {}
        for name, (mx, l2) in self.norms(weights).items():
            out[name] = {"max": float(mx.max()), "l2": float(np.sqrt(np.mean(l2**2)))}
        out["band_cos"] = self.meta.get("band_cos")
        out["radial_window"] = [float(self.radii[0]), float(self.radii[-1])]
        if self.convergence_order is not None:
            out["convergence_order"] = float(self.convergence_order)
        return out


def _model_fields(data, matter, i):
    sph = data.sphere
    r = data.radii[i]
    if matter is None:
        z = np.zeros(sph.size)
        return z, z, np.zeros((sph.size, 2))
    jI = data.jI[i] if data.jI is not None else matter.jI(r, sph)
    return matter.mu(r, sph), matter.j0(r, sph), jI


def evaluation_indices(data, r_window=None, stride=1, at_radii=None):
    """Radial nodes whose stencils see only finite lapse values.

    ``at_radii`` selects specific nodes instead (each must be a node to 1e-10
    relative), which keeps refinement studies on common leaves.
    """
    radii = data.radii
    if at_radii is not None:
        at_radii = np.atleast_1d(np.asarray(at_radii, dtype=float))
        idx = np.searchsorted(radii, at_radii)
        idx = np.clip(idx, 0, radii.size - 1)
        lower = np.clip(idx - 1, 0, radii.size - 1)
        idx = np.where(np.abs(radii[lower] - at_radii) < np.abs(radii[idx] - at_radii), lower, idx)
        if np.any(np.abs(radii[idx] - at_radii) > 1e-10 * at_radii):
            raise GridTooCoarseError("requested oracle radii are not radial nodes")
        return idx
    finite = np.all(data.inv_N > 0.0, axis=1)
    ok = []
    for i in range(radii.size):
        idx1, _, idx2, _ = radial_stencil(radii, i)
        if not np.all(finite[np.union1d(idx1, idx2)]):
            continue
        if r_window is not None and not (r_window[0] <= radii[i] <= r_window[1]):
            continue
        ok.append(i)
    ok = np.array(ok[::stride], dtype=int)
    if ok.size == 0:
        raise GridTooCoarseError("no radial node has a finite stencil inside the window")
    return ok


def constraint_residuals(data, matter=None, r_window=None, stride=1, lemma=False,
                         band_cos=BAND_COS, at_radii=None) -> ResidualField:
    """Implied ``(mu, J)`` from the raw constraints minus the prescribed matter.

    ``matter`` defaults to the model attached to ``data``.  With ``lemma=True``
    the leafwise-system route is evaluated as well and stored for comparison.
    """
    if data.n != 3:
        raise GridTooCoarseError("the chart oracle is three-dimensional; use warped_residuals")
    matter = data.model if matter is None else matter
    idx = evaluation_indices(data, r_window, stride, at_radii)
    mu_res, j0_res, jI_res = [], [], []
    mu_a, mu_b, j_a, j_b, rgap = [], [], [], [], []
    for i in idx:
        ev = evaluate_leaf(data, i, lemma=lemma)
        mu, j0, jI = _model_fields(data, matter, i)
        mu_res.append(ev.mu_raw.ravel() - mu)
        j0_res.append(ev.j_raw[0].ravel() - j0)
        jI_res.append(ev.j_raw[1:].reshape(2, -1).T - jI)
        if lemma:
            mu_a.append(ev.mu_raw.ravel())
            mu_b.append(ev.mu_lemma.ravel())
            j_a.append(ev.j_raw.reshape(3, -1))
            j_b.append(ev.j_lemma.reshape(3, -1))
            rgap.append((ev.R_raw - ev.R_block).ravel())
    field_ = ResidualField(
        radii=data.radii[idx], mu_residual=np.array(mu_res), j0_residual=np.array(j0_res),
        jI_residuals=np.array(jI_res), band=band_mask(data.sphere, band_cos),
        meta={"band_cos": band_cos},
    )
    if lemma:
        field_.lemma_mu = (np.array(mu_a), np.array(mu_b))
        field_.lemma_j = (np.array(j_a), np.array(j_b))
        field_.curvature_gap = np.array(rgap)
    return field_


def warped_residuals(radii, N, k, p, n, Lambda=0.0, mu=None, j0=None):
    """One-dimensional oracle for ``N(r)^2 dr^2 + r^2 round`` in dimension ``n``.

    Uses the warped-product curvature ``R = -2(n-1) phi''/phi + (n-1)(n-2)(1 - phi'^2)/phi^2``
    with ``phi = r`` in arclength (``phi' = 1/N``) and the radial divergence
    with the warped Christoffel symbols.  Returns ``(mu_residual, j0_residual)``
    at every node with finite stencils (NaN elsewhere).
    """
    radii = np.asarray(radii, dtype=float)
    N = np.asarray(N, dtype=float)
    k = np.asarray(k, dtype=float)
    p = np.asarray(p, dtype=float)
    invN = np.where(np.isfinite(N), 1.0 / N, 0.0)
    mu = np.zeros_like(radii) if mu is None else np.asarray(mu, dtype=float)
    j0 = np.zeros_like(radii) if j0 is None else np.asarray(j0, dtype=float)
    out_mu = np.full(radii.size, np.nan)
    out_j = np.full(radii.size, np.nan)
    for i in range(radii.size):
        idx1, w1, _, _ = radial_stencil(radii, i)
        if np.any(invN[idx1] <= 0.0):
            continue
        r = radii[i]
        dphi = invN
        # phi'' = (1/N) d(1/N)/dr; the product is differenced as one field
        ddphi = 0.5 * np.dot(w1, invN[idx1] ** 2)
        R = -2.0 * (n - 1) * ddphi / r + (n - 1) * (n - 2) * (1.0 - dphi[i] ** 2) / r**2
        trK = k[i] + (n - 1) * p[i]
        normK = k[i] ** 2 + (n - 1) * p[i] ** 2
        out_mu[i] = (R - 2.0 * Lambda + trK**2 - normK) / (16.0 * np.pi) - mu[i]
        # div(K)_r = N^-2 (d_r K_rr - 2 Gamma^r_rr K_rr) + (n-1)(k - p)/r with K_rr = k N^2
        Krr = k[idx1] / invN[idx1] ** 2
        dlogN = -np.dot(w1, np.log(invN[idx1]))
        divK = invN[i] ** 2 * (np.dot(w1, Krr) - 2.0 * dlogN * Krr[list(idx1).index(i)]) \
            + (n - 1) * (k[i] - p[i]) / r
        dtr = np.dot(w1, k[idx1] + (n - 1) * p[idx1])
        out_j[i] = (divK - dtr) / (8.0 * np.pi) - j0[i]
    return out_mu, out_j


def convergence_order(coarse, fine, ratio=2.0):
    """Observed order from error norms at spacing ``h`` and ``h / ratio``."""
    if fine <= 0.0:
        return np.inf
    return float(np.log(coarse / fine) / np.log(ratio))
