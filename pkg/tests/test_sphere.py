import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radial_ids.errors import DegenerateMetricError, GridMismatchError, ResolutionTooSmallError
from radial_ids.family import exp_perturbed_family, tangent_generator
from radial_ids.sphere import (
    SphereGrid,
    SphereMetric,
    build_grid,
    gauss_curvature,
    gradient_norm_sq,
    integrate,
    laplace_beltrami,
)

M = np.array([[1.0, 0.3, 0.2], [0.3, -0.4, 0.1], [0.2, 0.1, -0.6]])


def perturbed_metric(grid, amplitude=0.05):
    fam = exp_perturbed_family(grid, tangent_generator(grid, M, amplitude), 1.0, 1.0)
    return fam.metric(1.0)


def test_build_grid_area():
    g = build_grid(32, 64)
    assert g.size == 2048
    assert np.all(g.weights > 0)
    assert abs(integrate(g, np.ones(g.size)) - 4 * np.pi) < 1e-10


def test_coarsest_grid_is_valid():
    g = build_grid(8, 8)
    assert g.size == 64
    assert abs(g.weights.sum() - 4 * np.pi) < 1e-12


@pytest.mark.parametrize("shape", [(4, 4), (7, 16), (16, 6)])
def test_resolution_too_small(shape):
    with pytest.raises(ResolutionTooSmallError):
        build_grid(*shape)


def test_odd_phi_rejected():
    with pytest.raises(ResolutionTooSmallError):
        SphereGrid(8, 9)


def test_integrate_odd_field_vanishes():
    g = build_grid(16, 32)
    assert abs(integrate(g, g.cos_theta)) < 1e-14


# 16 Fejer rows integrate polynomials in cos(theta) up to degree 15 exactly
@given(l=st.integers(0, 3), m=st.integers(0, 3))
@settings(max_examples=25, deadline=None)
def test_quadrature_exact_for_polynomials(l, m):
    # int x^2l z^2m over S^2 has a closed form through Beta functions
    from scipy.special import gamma
    g = build_grid(16, 32)
    x, _, z = g.normal.T
    exact = 2 * gamma(l + 0.5) * gamma(m + 0.5) * gamma(0.5) / gamma(l + m + 1.5)
    assert integrate(g, x ** (2 * l) * z ** (2 * m)) == pytest.approx(exact, rel=1e-10)


def test_integrate_grid_mismatch():
    a, b = build_grid(8, 16), build_grid(10, 16)
    with pytest.raises(GridMismatchError):
        integrate(a, np.ones(a.size), SphereMetric.round(b))
    with pytest.raises(GridMismatchError):
        integrate(a, np.ones(b.size))


def test_gauss_bonnet_perturbed():
    g = build_grid(16, 32)
    metric = perturbed_metric(g, 0.1)
    assert integrate(g, gauss_curvature(g, metric), metric) == pytest.approx(4 * np.pi, abs=1e-10)


def test_laplacian_kernel():
    g = build_grid(16, 32)
    metric = perturbed_metric(g)
    assert np.abs(laplace_beltrami(g, np.full(g.size, 3.7), metric)).max() < 1e-10


def test_laplacian_l1_eigenfunction_second_order():
    errs = []
    for n in (16, 32, 64):
        g = build_grid(n, 2 * n)
        lap = laplace_beltrami(g, g.cos_theta)
        errs.append(np.abs(lap + 2 * g.cos_theta).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert errs[0] < 0.05
    assert np.all(orders > 1.8)


def _coordinate_laplacian(theta, phi, metric_fn, f_fn, h=1e-4):
    """Independent div-grad in (theta, phi) by nested central differences."""
    def flux(t, p):
        stt, stp, spp = metric_fn(t, p)
        det = stt * spp - stp**2
        ft = (f_fn(t + h, p) - f_fn(t - h, p)) / (2 * h)
        fp = (f_fn(t, p + h) - f_fn(t, p - h)) / (2 * h)
        ut = (spp * ft - stp * fp) / det
        up = (-stp * ft + stt * fp) / det
        return np.sqrt(det) * ut, np.sqrt(det) * up
    stt, stp, spp = metric_fn(theta, phi)
    sq = np.sqrt(stt * spp - stp**2)
    dt = (flux(theta + h, phi)[0] - flux(theta - h, phi)[0]) / (2 * h)
    dp = (flux(theta, phi + h)[1] - flux(theta, phi - h)[1]) / (2 * h)
    return (dt + dp) / sq


def test_laplacian_matches_coordinate_formula_under_refinement():
    from radial_ids.family import generator_at
    Mb = 0.1 * M

    def metric_fn(t, p):
        # exp of the frame generator: cosh(beta) I + sinh(beta)/beta B
        B = generator_at(Mb, t, p)
        a, b = B[..., 0], B[..., 1]
        beta = np.hypot(a, b)
        ch, sh = np.cosh(beta), np.sinh(beta) / beta
        g11, g12, g22 = ch + sh * a, sh * b, ch - sh * a
        return g11, np.sin(t) * g12, np.sin(t) ** 2 * g22

    def f_fn(t, p):
        return np.sin(t) ** 2 * np.cos(2 * p) + np.cos(t) ** 3 + 0.3 * np.sin(t) * np.sin(p)

    errs = []
    for n in (16, 32, 64):
        g = build_grid(n, 2 * n)
        metric = exp_perturbed_family(g, tangent_generator(g, Mb), 1.0, 1.0).metric(1.0)
        lap = laplace_beltrami(g, f_fn(g.theta_nodes, g.phi_nodes), metric, conservative=False)
        ref = _coordinate_laplacian(g.theta_nodes, g.phi_nodes, metric_fn, f_fn)
        band = np.abs(g.cos_theta) < 0.9
        errs.append(np.abs(lap - ref)[band].max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), (errs, orders)


def test_gauss_curvature_round_and_scaled():
    g = build_grid(16, 32)
    assert np.abs(gauss_curvature(g, SphereMetric.round(g)) - 1).max() < 1e-12
    K = gauss_curvature(g, SphereMetric.scaled_round(g, 1.7))
    assert np.abs(K - 1 / 1.7**2).max() < 1e-12


def test_gauss_curvature_perturbed_converges():
    ref_grid = build_grid(128, 256)
    ref = gauss_curvature(ref_grid, perturbed_metric(ref_grid), gauss_bonnet=False)
    ref = ref.reshape(128, 256)
    errs = []
    for n in (16, 32):
        g = build_grid(n, 2 * n)
        K = gauss_curvature(g, perturbed_metric(g), gauss_bonnet=False).reshape(n, 2 * n)
        # coarse rows sit midway between two fine rows; coarse columns coincide with fine ones
        s = 128 // n
        coarse_ref = ((ref[s // 2 - 1::s] + ref[s // 2::s]) / 2)[:, ::s]
        errs.append(np.abs(K - coarse_ref)[np.abs(np.cos(g.theta)) < 0.9].max())
    assert errs[1] < errs[0] / 3.0


def test_degenerate_metric_rejected():
    g = build_grid(8, 16)
    frame = np.zeros((g.size, 3))
    frame[:, 0] = 1.0
    with pytest.raises(DegenerateMetricError):
        SphereMetric(g, frame)


def test_gradient_norm_of_height_function():
    # |grad z|^2 = sin^2 theta on the round sphere
    errs = []
    for n in (32, 64):
        g = build_grid(n, 2 * n)
        errs.append(np.abs(gradient_norm_sq(g, g.cos_theta) - g.sin_theta**2).max())
    assert errs[0] < 5e-3
    assert np.log2(errs[0] / errs[1]) > 1.8
