"""Quasi-local and asymptotic quantities on a solved family of leaves.

All quantities are evaluated on the radial nodes of the solution; leaves
are the spheres ``{r} x S^2`` with metric ``r^2 sigma(r)``.  The unit normal
of a leaf is taken outward (increasing r).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import InvalidFChoiceError, NonConvergentLadderError, WrongDimensionError
from .family import MetricFamily, round_family
from .matter import MatterModel, covector_to_cartesian
from .sphere import SphereGrid

SCHEMA_VERSION = "radial-ids-report/1"
NORMAL_CONVENTION = "outward unit normal (increasing r)"


@dataclass
class InitialDataFamily:
    """Sampled data ``(N, k, p, sigma)`` on radial nodes times a sphere grid.

    ``inv_N`` stores ``1/N`` (finite on horizon leaves).  Arrays have shape
    ``(n_r, N_nodes)``.  ``jI`` (optional) holds the coordinate angular
    momentum components, shape ``(n_r, N_nodes, 2)``.
    """

    radii: np.ndarray
    sphere: SphereGrid
    family: MetricFamily
    inv_N: np.ndarray
    k: np.ndarray
    p: np.ndarray
    n: int = 3
    Lambda: float = 0.0
    model: MatterModel = None
    jI: np.ndarray = None
    boundary: str = "unspecified"
    p_tilde: np.ndarray = None

    def __post_init__(self):
        shape = (self.radii.size, self.sphere.size)
        for name in ("inv_N", "k", "p"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite values")
            setattr(self, name, a)
        if np.any(self.inv_N[1:] <= 0.0) or np.any(self.inv_N < 0.0):
            raise ValueError("lapse must be positive on the open interior")

    @property
    def N(self):
        with np.errstate(divide="ignore"):
            return 1.0 / self.inv_N

    @property
    def r0(self):
        return float(self.radii[0])

    def index_of(self, r):
        i = int(np.argmin(np.abs(self.radii - r)))
        if not np.isclose(self.radii[i], r, rtol=1e-12, atol=0.0):
            raise ValueError(f"radius {r} is not a node of the data")
        return i

    def area_weights(self, i):
        """Quadrature weights of ``dA_sigma(r_i)``."""
        if self.family.is_round:
            return self.sphere.weights
        return self.sphere.weights * self.family.metric(self.radii[i]).density

    def j0(self, i):
        if self.model is None:
            return np.zeros(self.sphere.size)
        return self.model.j0(self.radii[i], self.sphere)

    def jT_norm_sq(self, i):
        """``|J^T|^2_sigma(r)`` from the coordinate components."""
        if self.jI is None:
            if self.model is None:
                return np.zeros(self.sphere.size)
            jI = self.model.jI(self.radii[i], self.sphere)
        else:
            jI = self.jI[i]
        c = covector_to_cartesian(self.sphere, jI)
        Sinv = self.family.cartesian_inverse(self.radii[i])
        return np.einsum("na,nab,nb->n", c, Sinv, c)

    def j_norm(self, i):
        """``|J|_g = sqrt(N^-2 J_0^2 + r^-2 |J^T|^2)``."""
        r = self.radii[i]
        return np.sqrt((self.inv_N[i] * self.j0(i)) ** 2 + self.jT_norm_sq(i) / r**2)

    @classmethod
    def from_spherical(cls, solution, sphere=None):
        """Broadcast a spherically symmetric solution onto a sphere grid."""
        g = solution.grid
        if g.n != 3:
            raise WrongDimensionError("leaf diagnostics need n = 3")
        sphere = sphere or SphereGrid(8, 16)
        arg = np.maximum(g.background(g.nodes) - solution.f, 0.0)
        ones = np.ones(sphere.size)
        return cls(
            radii=g.nodes.copy(), sphere=sphere, family=round_family(sphere),
            inv_N=np.sqrt(arg)[:, None] * ones, k=solution.k()[:, None] * ones,
            p=solution.p[:, None] * ones, n=3, Lambda=g.Lambda, model=solution.model,
            boundary=getattr(solution, "boundary", "unspecified"),
        )

    @classmethod
    def from_umbilic(cls, run, boundary="prescribed"):
        r = run.radii[:, None]
        inv_N = np.sqrt(run.omega * (1.0 + r**2)) if run.hyperbolic else np.sqrt(run.omega)
        return cls(
            radii=run.radii.copy(), sphere=run.family.grid, family=run.family, inv_N=inv_N,
            k=run.momentum.p.copy(), p=run.momentum.p.copy(), n=3, Lambda=run.model.Lambda,
            model=run.model, jI=run.momentum.jI, boundary=boundary,
        )


def _require_n3(data):
    if data.n != 3:
        raise WrongDimensionError("leaf diagnostics need n = 3")


def null_expansions(data: InitialDataFamily, i):
    """``theta_+-``, ``H``, ``P`` and ``theta_+ theta_-`` on leaf ``i``."""
    r = data.radii[i]
    H = 2.0 * data.inv_N[i] / r
    P = 2.0 * data.p[i]
    tp, tm = H + P, H - P
    return tp, tm, H, P, tp * tm


def hawking_energy(data: InitialDataFamily, i):
    """``(1/8 pi) int r (1 + r^2 p^2 - N^-2) dA_sigma``."""
    _require_n3(data)
    r = data.radii[i]
    integrand = r * (1.0 + r**2 * data.p[i] ** 2 - data.inv_N[i] ** 2)
    return float(np.dot(data.area_weights(i), integrand)) / (8.0 * np.pi)


def hawking_energy_AH(data: InitialDataFamily, i, P=None):
    """Hawking energy with the asymptotically hyperbolic normalization.

    ``sqrt(|S|/16 pi) (1 - (1/16 pi) int (H^2 - P^2) dA + |S| / 4 pi)``.  ``P``
    defaults to ``2 p~`` for hyperboloidal data and ``2 p`` otherwise.
    """
    _require_n3(data)
    r = data.radii[i]
    w = data.area_weights(i)
    area = r**2 * w.sum()
    if P is None:
        P = 2.0 * (data.p_tilde[i] if data.p_tilde is not None else data.p[i])
    H = 2.0 * data.inv_N[i] / r
    integral = r**2 * float(np.dot(w, H**2 - P**2))
    return float(np.sqrt(area / (16.0 * np.pi)) * (1.0 - integral / (16.0 * np.pi) + area / (4.0 * np.pi)))


def hyperboloidal_slice(data: InitialDataFamily, p_tilde):
    """Same ``(g, sigma)`` with ``p = sqrt(1 + p~^2)`` and ``p~`` attached."""
    p_tilde = np.broadcast_to(np.asarray(p_tilde, dtype=float), data.p.shape).copy()
    p = np.sqrt(1.0 + p_tilde**2)
    return InitialDataFamily(data.radii, data.sphere, data.family, data.inv_N, p, p, data.n,
                             data.Lambda, data.model, data.jI, data.boundary, p_tilde)


def leaf_area(data: InitialDataFamily, i):
    return float(data.radii[i] ** 2 * data.area_weights(i).sum())


def hawking_profile(data):
    return np.array([hawking_energy(data, i) for i in range(data.radii.size)])


def f_choice_values(data: InitialDataFamily, choice, i):
    """The nonnegative density ``f`` of a modified mass on leaf ``i``.

    ``choice`` is ``"zero"``, ``("eps_full", eps)`` or ``"angular_ratio"``.
    """
    name, eps = (choice, None) if isinstance(choice, str) else choice
    if name == "zero":
        return np.zeros(data.sphere.size)
    J = data.j_norm(i)
    if name == "eps_full":
        f = (1.0 - eps) * (J - data.inv_N[i] * np.abs(data.j0(i)))
    elif name == "angular_ratio":
        jt = data.jT_norm_sq(i) / data.radii[i] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(J > 0.0, jt / (2.0 * J), 0.0)
    else:
        raise InvalidFChoiceError(f"unknown f choice {name!r}")
    scale = max(1.0, float(np.abs(J).max()))
    if np.any(f < -1e-14 * scale):
        raise InvalidFChoiceError(f"f choice {choice!r} is negative somewhere")
    return np.maximum(f, 0.0)


def choice_label(choice):
    if isinstance(choice, str):
        return choice
    return f"{choice[0]}({choice[1]:g})"


def _accumulated(data, choice):
    """``int_{r0}^r int s^2 f dA ds`` at every node plus a power-law tail estimate."""
    r = data.radii
    F = np.array([r[i] ** 2 * float(np.dot(data.area_weights(i), f_choice_values(data, choice, i)))
                  for i in range(r.size)])
    if not np.any(F):
        return np.zeros(r.size), 0.0
    acc = np.concatenate([[0.0], cumulative_simpson(F, x=r)])
    tail = 0.0
    if F[-1] > 0.0 and F[-2] > 0.0:
        rate = -np.log(F[-1] / F[-2]) / np.log(r[-1] / r[-2])
        tail = F[-1] * r[-1] / (rate - 1.0) if rate > 1.0 else np.inf
    return acc, tail


def modified_mass(data: InitialDataFamily, choice):
    """``M_f(r) = m_H(r) - int_{r0}^r int s^2 f dA ds`` at every node."""
    acc, _ = _accumulated(data, choice)
    return hawking_profile(data) - acc


def _ladder_indices(radii, r_max=None, count=7):
    r_max = radii[-1] if r_max is None else r_max
    targets = r_max * 2.0 ** (-np.arange(count) / 2.0)
    idx = [int(np.argmin(np.abs(radii - t))) for t in targets]
    if len(set(idx)) < count:
        raise NonConvergentLadderError("radial grid too coarse for the extrapolation ladder")
    return np.array(idx)


def model_decay_alpha(model: MatterModel):
    """Slowest decay exponent of the mass aspect implied by the matter tails.

    ``mu ~ r^-c`` leaves a tail ``r^(n-c)``, the ``p^2`` terms ``r^(n-2b)``; the
    lapse itself contributes ``1/r``.
    """
    alpha = 1.0
    if model is None:
        return alpha
    n = model.n
    if not model.A_mu.is_zero:
        alpha = min(alpha, model.decay_c - n)
    if not (model.A_j.is_zero and model.A_k.is_zero):
        alpha = min(alpha, 2.0 * model.decay_b - n)
    return alpha


def extrapolate_ladder(radii, values, noise=0.0, alpha=None):
    """Neville extrapolation to r = inf in ``x = r^-alpha``.

    Without ``alpha`` it is measured from the first two differences and
    snapped to the nearest half-integer when within 5%.  Returns ``(limit, alpha, tail_bound)``
    where ``tail_bound`` bounds ``|values[0] - limit|`` from the geometric
    decay of the differences, with a safety factor 2.  Differences below
    ``noise`` (rounding level of the summands) count as converged.
    """
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    d0, d1 = values[0] - values[1], values[1] - values[2]
    scale = max(1.0, float(np.abs(values).max()))
    if abs(d0) <= 1e-14 * scale:
        return float(values[0]), 1.0, 0.0
    if max(abs(d0), abs(d1)) <= noise:
        return float(values[0]), 1.0, 2.0 * max(abs(d0), abs(d1))
    ratio_r = radii[0] / radii[1]
    if alpha is None:
        ratio = d1 / d0
        if not ratio > 1.0:
            raise NonConvergentLadderError("ladder differences do not decay")
        alpha = float(np.log(ratio) / np.log(ratio_r))
        snapped = round(2.0 * alpha) / 2.0
        if snapped > 0 and abs(alpha - snapped) <= 0.05 * snapped:
            alpha = snapped
    elif not alpha > 0.0:
        raise NonConvergentLadderError("decay exponent must be positive")
    x = radii ** (-alpha)
    T = values.astype(float).copy()
    m = x.size
    for j in range(1, m):
        for i in range(m - 1, j - 1, -1):
            T[i] = (x[i - j] * T[i] - x[i] * T[i - 1]) / (x[i - j] - x[i])
    tail = 2.0 * abs(d0) / (ratio_r**alpha - 1.0)
    return float(T[-1]), alpha, float(tail)


def adm_quantities(data: InitialDataFamily, return_details=False, alpha=None):
    """ADM energy and momentum by extrapolation along a radius ladder.

    ``E = (1/8 pi) lim int r (N^2 - 1) dA`` and
    ``P_i = (1/4 pi) lim int p N^2 r^2 nu^i dA`` (n = 3).  For ``Lambda < 0``
    the energy is the limit of :func:`hawking_energy_AH` instead.  ``alpha``
    defaults to :func:`model_decay_alpha` of the attached model, or is
    measured from the ladder when no model is attached.
    """
    _require_n3(data)
    idx = _ladder_indices(data.radii)
    r = data.radii[idx]
    E_vals, P_vals = [], []
    magnitude = 0.0
    nu = data.sphere.normal
    for i in idx:
        w = data.area_weights(i)
        N2 = 1.0 / data.inv_N[i] ** 2
        if data.Lambda < 0:
            # the lapse integral has no finite limit here; use the hyperbolic Hawking energy
            E_vals.append(hawking_energy_AH(data, i))
            magnitude = max(magnitude, data.radii[i] ** 3)
        else:
            magnitude = max(magnitude, data.radii[i] * float(N2.max()))
            E_vals.append(float(np.dot(w, data.radii[i] * (N2 - 1.0))) / (8.0 * np.pi))
        P_vals.append((w * data.p[i] * N2 * data.radii[i] ** 2) @ nu / (4.0 * np.pi))
    if alpha is None and data.model is not None:
        alpha = model_decay_alpha(data.model)
    E, alpha, tail = extrapolate_ladder(r, E_vals, noise=1e3 * np.finfo(float).eps * magnitude,
                                        alpha=alpha)
    P_vals = np.array(P_vals)
    P = np.zeros(3)
    for c in range(3):
        col = P_vals[:, c]
        if np.abs(col).max() <= 1e-14:
            continue
        P[c] = extrapolate_ladder(r, col, alpha=alpha)[0]
    if return_details:
        return E, P, dict(alpha=alpha, tail_bound=tail, ladder=r, values=np.array(E_vals))
    return E, P


def untrapped_scan(data: InitialDataFamily):
    """Per-leaf flag for ``(4/r^2)(1/N^2 - r^2 p^2) > 0`` everywhere on the leaf."""
    r = data.radii[:, None]
    val = 4.0 / r**2 * (data.inv_N**2 - r**2 * data.p**2)
    mins = val.min(axis=1)
    return mins > 0.0, mins


def dec_margins(data: InitialDataFamily):
    """Minimum of ``mu - |J|_g`` per leaf (zero for vacuum)."""
    if data.model is None:
        return np.zeros(data.radii.size)
    out = np.empty(data.radii.size)
    for i, r in enumerate(data.radii):
        out[i] = float((data.model.mu(r, data.sphere) - data.j_norm(i)).min())
    return out


def horizon_radii(data: InitialDataFamily, tol=1e-10):
    """Leaves where ``min (1/N^2 - r^2 p^2)`` vanishes or changes sign."""
    r = data.radii
    h = (data.inv_N**2 - r[:, None] ** 2 * data.p**2).min(axis=1)
    out = [float(r[i]) for i in range(r.size) if abs(h[i]) <= tol]
    for i in range(r.size - 1):
        if abs(h[i]) > tol and abs(h[i + 1]) > tol and h[i] * h[i + 1] < 0:
            out.append(float(r[i] - h[i] * (r[i + 1] - r[i]) / (h[i + 1] - h[i])))
    return sorted(out)


@dataclass
class DiagnosticsReport:
    radii: np.ndarray
    m_H: np.ndarray
    m_H_AH: np.ndarray
    M_f: dict
    theta_plus_min: np.ndarray
    theta_plus_max: np.ndarray
    theta_minus_min: np.ndarray
    theta_minus_max: np.ndarray
    untrapped: np.ndarray
    dec_margin_min: np.ndarray
    E_ADM: float
    P: np.ndarray
    area_r0: float
    penrose_gap: float
    refined_gap: dict
    horizon_radii: list
    conjecture1_lhs: float
    conjecture1_rhs: float
    verdicts: dict
    rigidity: dict
    adm_details: dict
    tolerances: dict
    boundary: str
    residuals: dict = field(default_factory=dict)

    def scalars(self):
        def clean(v):
            if isinstance(v, (np.floating, float)):
                return float(v) if np.isfinite(v) else None
            if isinstance(v, np.ndarray):
                return [clean(x) for x in v.tolist()]
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {str(k): clean(x) for k, x in v.items()}
            if isinstance(v, (np.bool_, bool)):
                return bool(v)
            if isinstance(v, np.integer):
                return int(v)
            return v

        return clean(dict(
            schema=SCHEMA_VERSION,
            normal_convention=NORMAL_CONVENTION,
            boundary=self.boundary,
            E_ADM=self.E_ADM,
            P=self.P,
            area_r0=self.area_r0,
            penrose_gap=self.penrose_gap,
            refined_gap=self.refined_gap,
            horizon_radii=self.horizon_radii,
            conjecture1_lhs=self.conjecture1_lhs,
            conjecture1_rhs=self.conjecture1_rhs,
            verdicts=self.verdicts,
            rigidity=self.rigidity,
            adm_alpha=self.adm_details.get("alpha"),
            adm_tail_bound=self.adm_details.get("tail_bound"),
            hawking_tail_bound=self.adm_details.get("hawking_tail_bound"),
            tolerances=self.tolerances,
            residuals=self.residuals,
        ))

    def per_radius_table(self):
        cols = [self.radii, self.m_H, self.m_H_AH, self.theta_plus_min, self.theta_plus_max,
                self.theta_minus_min, self.theta_minus_max, self.untrapped.astype(float),
                self.dec_margin_min]
        names = ["r", "m_H", "m_H_AH", "theta_plus_min", "theta_plus_max", "theta_minus_min",
                 "theta_minus_max", "untrapped", "dec_margin_min"]
        for k, v in self.M_f.items():
            cols.append(v)
            names.append(f"M_f[{k}]")
        return names, np.column_stack(cols)


DEFAULT_TOLERANCES = dict(
    monotonicity=1e-8,
    penrose=1e-6,
    dec=1e-12,
    horizon=1e-8,
    rigidity=1e-6,
)


def penrose_report(data: InitialDataFamily, matter: MatterModel = None,
                   f_choices=("zero", ("eps_full", 0.0), "angular_ratio"),
                   tolerances=None) -> DiagnosticsReport:
    """Assemble all diagnostics and inequality verdicts for one solved family.

    Verdicts whose hypotheses fail (DEC, untrapped leaves, horizon boundary,
    asymptotic flatness) read ``"not applicable"``.
    """
    _require_n3(data)
    if matter is not None and matter is not data.model:
        data = InitialDataFamily(data.radii, data.sphere, data.family, data.inv_N, data.k, data.p,
                                 data.n, data.Lambda, matter, data.jI, data.boundary, data.p_tilde)
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    r = data.radii
    m_H = hawking_profile(data)
    m_AH = (np.array([hawking_energy_AH(data, i) for i in range(r.size)])
            if (data.Lambda < 0 or data.p_tilde is not None) else np.full(r.size, np.nan))
    th = [null_expansions(data, i) for i in range(r.size)]
    tp_min = np.array([t[0].min() for t in th])
    tp_max = np.array([t[0].max() for t in th])
    tm_min = np.array([t[1].min() for t in th])
    tm_max = np.array([t[1].max() for t in th])
    untrapped, _ = untrapped_scan(data)
    dec = dec_margins(data)

    E, P, details = adm_quantities(data, return_details=True)
    try:
        idx = _ladder_indices(r)
        details["hawking_limit"], _, details["hawking_tail_bound"] = extrapolate_ladder(
            r[idx], m_H[idx], alpha=details["alpha"])
    except NonConvergentLadderError:
        details["hawking_limit"], details["hawking_tail_bound"] = np.nan, np.inf
    area = leaf_area(data, 0)
    gap = E - np.sqrt(area / (16.0 * np.pi))

    h0_max = float(np.abs(data.inv_N[0] ** 2 - r[0] ** 2 * data.p[0] ** 2).max())
    boundary_gah = h0_max <= tol["horizon"]
    dec_ok = bool(np.all(dec >= -tol["dec"]))
    untrapped_ok = bool(np.all(untrapped[1:]))
    applicable = dec_ok and untrapped_ok
    penrose_ok = boundary_gah and data.Lambda == 0.0

    dm = np.diff(m_H) / np.diff(r)
    mono_slack = float(np.min(dm + tol["monotonicity"] * (1.0 + np.abs(m_H[1:]))))

    M_f, refined = {}, {}
    mono_f = {}
    for c in f_choices:
        label = choice_label(c)
        acc, tail = _accumulated(data, c)
        M_f[label] = m_H - acc
        refined[label] = float(gap - acc[-1] - tail)
        dMf = np.diff(M_f[label]) / np.diff(r)
        mono_f[label] = float(np.min(dMf + tol["monotonicity"] * (1.0 + np.abs(M_f[label][1:]))))

    def verdict(ok):
        return bool(ok) if applicable else "not applicable"

    verdicts = dict(
        dec=dec_ok,
        untrapped=untrapped_ok,
        boundary_generalized_horizon=bool(boundary_gah),
        monotonicity=verdict(mono_slack >= 0.0),
        monotonicity_slack=mono_slack,
        penrose=verdict(gap >= -tol["penrose"]) if penrose_ok else "not applicable",
        refined={k: (verdict(v >= -tol["penrose"] and mono_f[k] >= 0.0) if penrose_ok
                     else "not applicable") for k, v in refined.items()},
        modified_mass_monotone={k: verdict(v >= 0.0) for k, v in mono_f.items()},
    )
    rigidity = {}
    if abs(gap) <= tol["rigidity"]:
        dev = max(float(np.abs(data.family.deviation(x)).max()) for x in r[:: max(1, r.size // 20)])
        spread = float(np.max((data.inv_N.max(axis=1) - data.inv_N.min(axis=1))))
        j0max = max(float(np.abs(data.j0(i)).max()) for i in range(r.size))
        rigidity = dict(sigma_round=dev <= tol["rigidity"], lapse_angular_constant=spread <= tol["rigidity"],
                        j0_small=j0max <= tol["rigidity"], sigma_deviation=dev, lapse_spread=spread,
                        j0_max=j0max)

    acc, tail = _accumulated(data, ("eps_full", 0.0))
    conj_rhs = float(acc[-1] + tail)
    return DiagnosticsReport(
        radii=r, m_H=m_H, m_H_AH=m_AH, M_f=M_f, theta_plus_min=tp_min, theta_plus_max=tp_max,
        theta_minus_min=tm_min, theta_minus_max=tm_max, untrapped=untrapped, dec_margin_min=dec,
        E_ADM=E, P=P, area_r0=area, penrose_gap=float(gap), refined_gap=refined,
        horizon_radii=horizon_radii(data, tol["horizon"]), conjecture1_lhs=float(np.linalg.norm(P)),
        conjecture1_rhs=conj_rhs, verdicts=verdicts, rigidity=rigidity, adm_details=details,
        tolerances=tol, boundary=data.boundary,
    )
