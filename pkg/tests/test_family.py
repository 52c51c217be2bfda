import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from radial_ids.errors import InvalidGeneratorError
from radial_ids.family import (
    MetricFamily,
    exp_perturbed_family,
    load_generator,
    round_family,
    save_generator,
    tangent_generator,
)
from radial_ids.sphere import SphereMetric, build_grid, integrate, laplace_beltrami, scalar_curvature

M = np.array([[1.0, 0.3, 0.2], [0.3, -0.4, 0.1], [0.2, 0.1, -0.6]])


@pytest.fixture(scope="module")
def grid():
    return build_grid(16, 32)


@pytest.fixture(scope="module")
def family(grid):
    return exp_perturbed_family(grid, tangent_generator(grid, M, 0.1), 1.0, 1.0)


def frame_det(frame):
    return frame[:, 0] * frame[:, 2] - frame[:, 1] ** 2


def test_round_family(grid):
    fam = round_family(grid)
    for r in (1.0, 3.0, 50.0):
        assert np.all(fam.derivative_norm(r) == 0.0)
        assert np.abs(fam.scalar_curvature(r) - 2.0).max() < 1e-12
        assert np.abs(frame_det(fam.frame(r)) - 1.0).max() == 0.0


def test_zero_generator_is_round(grid):
    fam = exp_perturbed_family(grid, np.zeros((grid.size, 3)), 2.0, 1.5)
    assert fam.is_round
    assert np.array_equal(fam.frame(1.5), round_family(grid).frame(1.5))


def test_determinant_and_decay(family):
    for r in np.linspace(1.0, 12.0, 23):
        assert np.abs(frame_det(family.frame(r)) - 1.0).max() < 1e-12
        assert np.abs(family.deviation(r)).max() <= 0.11 * np.exp(-(r - 1.0))


def test_frame_matches_matrix_exponential(grid, family):
    B = family.B
    r = 1.7
    w = np.exp(-(r - 1.0))
    got = family.frame(r)
    for i in range(0, grid.size, 37):
        b = np.array([[B[i, 0], B[i, 1]], [B[i, 1], B[i, 2]]])
        E = expm(w * b)
        assert np.allclose(got[i], [E[0, 0], E[0, 1], E[1, 1]], atol=1e-14)
        assert abs(np.linalg.det(E) - 1.0) < 1e-12


def test_not_trace_free_rejected(grid):
    B = tangent_generator(grid, M, 0.1)
    B[:, 2] += 1e-6
    with pytest.raises(InvalidGeneratorError):
        exp_perturbed_family(grid, B, 1.0, 1.0)


@pytest.mark.parametrize("lam", [0.0, -1.0])
def test_nonpositive_rate_rejected(grid, lam):
    with pytest.raises(InvalidGeneratorError):
        exp_perturbed_family(grid, tangent_generator(grid, M, 0.1), lam, 1.0)


def test_wrong_generator_shape(grid):
    with pytest.raises(InvalidGeneratorError):
        MetricFamily(grid, np.zeros((grid.size - 1, 3)))


def test_derivative_is_trace_free_and_matches_fd(family):
    r, h = 2.3, 1e-5
    d = family.derivative_frame(r)
    fd = (family.frame(r + h) - family.frame(r - h)) / (2 * h)
    assert np.abs(d - fd).max() < 1e-9
    inv = SphereMetric(family.grid, family.frame(r)).inverse_frame()
    trace = inv[:, 0] * d[:, 0] + 2 * inv[:, 1] * d[:, 1] + inv[:, 2] * d[:, 2]
    assert np.abs(trace).max() < 1e-13


@given(r=st.floats(1.0, 20.0), lam=st.floats(0.2, 3.0))
@settings(max_examples=20, deadline=None)
def test_derivative_norm_scaling(grid, r, lam):
    fam = exp_perturbed_family(grid, tangent_generator(grid, M, 0.1), lam, 1.0)
    a = fam.derivative_norm(r)
    b = fam.derivative_norm(r + np.log(2.0) / lam)
    big = a > 1e-200
    assert np.allclose(a[big] / b[big], 4.0, rtol=1e-10)


def test_derivative_norm_tail(family):
    assert family.derivative_norm(40.0).max() <= 1e-12


def test_area_preserved(family):
    g = family.grid
    for r in (1.0, 2.0, 5.0):
        assert integrate(g, np.ones(g.size), family.metric(r)) == pytest.approx(4 * np.pi, abs=1e-10)


def test_curvature_cache_matches_direct(family):
    g = family.grid
    for r in (1.0, 1.37, 4.2, 30.0):
        direct = scalar_curvature(g, family.metric(r))
        assert np.abs(family.scalar_curvature(r) - direct).max() < 1e-8


def test_cached_laplacian_matches_operator(family):
    g = family.grid
    f = np.cos(g.theta_nodes) ** 2 + g.sin_theta * np.cos(g.phi_nodes)
    r = 2.2
    L = family.laplacian_matrix(r)
    direct = laplace_beltrami(g, f, family.metric(r), conservative=False)
    assert np.abs(L @ f - direct).max() < 1e-8


def test_cartesian_inverse_interpolation(family):
    r = 1.9
    direct = family.metric(r).cartesian_inverse
    assert np.abs(family.cartesian_inverse(r) - direct).max() < 1e-9


def test_generator_table_roundtrip(tmp_path, grid):
    B = tangent_generator(grid, M, 0.05)
    path = tmp_path / "B.txt"
    save_generator(path, B)
    assert np.array_equal(load_generator(path, grid), B)


def test_generator_table_wrong_nodes(tmp_path, grid):
    path = tmp_path / "B.txt"
    save_generator(path, np.zeros((10, 3)))
    with pytest.raises(InvalidGeneratorError):
        load_generator(path, grid)
