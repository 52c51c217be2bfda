import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from radial_ids.errors import DegenerateMetricError, InvalidFChoiceError, NonSphericalModelError
from radial_ids.matter import power_law_matter
from radial_ids.spherical import (
    RadialGrid,
    RadialProfile,
    lapse_from_f,
    ode_residuals,
    select_f0,
    solve_f,
    solve_p,
    solve_spherical,
    static_potential,
)


def grid(r0=1.0, r_max=50.0, n_nodes=200, n=3, Lambda=0.0):
    return RadialGrid(r0, r_max, n_nodes, n=n, Lambda=Lambda)


def test_radial_grid_is_geometric():
    g = grid(2.0, 32.0, 5)
    assert np.allclose(g.nodes, [2, 4, 8, 16, 32])
    assert g.nodes[0] == 2.0 and g.nodes[-1] == 32.0


@pytest.mark.parametrize("args", [(0.0, 1.0), (2.0, 1.0), (1.0, 2.0, 1)])
def test_radial_grid_rejects(args):
    with pytest.raises(ValueError):
        RadialGrid(*args)


def test_p_vanishes_without_sources():
    assert np.all(solve_p(power_law_matter(), grid()) == 0.0)


def test_p_from_k():
    g = grid()
    m = power_law_matter(A_k=1.0, decay_b=2.0)
    p = solve_p(m, g)
    r = g.nodes
    assert np.abs(p + r**-2).max() < 1e-12
    # p' = -p/r + k/r
    prof = RadialProfile(m, g)
    h = 1e-5 * r[5:-5]
    dp = (prof(r[5:-5] + h) - prof(r[5:-5] - h)) / (2 * h)
    assert np.abs(dp - (-p[5:-5] + m.k_of_r(r[5:-5])) / r[5:-5]).max() < 1e-8


def test_p_from_j0():
    g = grid()
    j0 = 0.37
    p = solve_p(power_law_matter(A_j=j0, decay_b=2.0), g)
    assert np.abs(p - 4 * np.pi * j0 * g.nodes**-2).max() < 1e-12


def test_non_spherical_model_rejected():
    with pytest.raises(NonSphericalModelError):
        solve_p(power_law_matter(A_j={"z": 0.1}), grid())


def test_f_vacuum_dimensions():
    g3, g4 = grid(), grid(n=4)
    m3, m4 = power_law_matter(), power_law_matter(decay_b=2.5, n=4)
    assert np.allclose(solve_f(solve_p(m3, g3), m3, 1.3, g3), 1.3 / g3.nodes, rtol=0, atol=1e-15)
    assert np.allclose(solve_f(solve_p(m4, g4), m4, 1.3, g4), 1.3 / g4.nodes**2, rtol=0, atol=1e-15)


def test_f_with_mu():
    g = grid(1.5, 40.0)
    mu0, f0 = 0.02, 0.7
    m = power_law_matter(A_mu=mu0, decay_c=4.0)
    f = solve_f(solve_p(m, g), m, f0, g)
    r = g.nodes
    exact = (f0 + 8 * np.pi * mu0 * (1 / g.r0 - 1 / r)) / r
    assert np.abs(f - exact).max() < 1e-12


def test_lapse_examples():
    g = grid(2.0, 40.0)
    r = g.nodes
    assert np.all(lapse_from_f(np.zeros_like(r), g) == 1.0)
    N = lapse_from_f(2.0 / r, g)
    assert np.isinf(N[0])
    assert np.allclose(N[1:], (1 - 2.0 / r[1:]) ** -0.5, rtol=1e-14)
    ga = grid(1.0, 20.0, Lambda=-3.0)
    ra = ga.nodes
    m = 0.3
    Na = lapse_from_f(2 * m / ra, ga)
    assert np.allclose(Na, (1 + ra**2 - 2 * m / ra) ** -0.5, rtol=1e-14)


def test_sads_solution_satisfies_f_equation():
    ga = grid(1.0, 20.0, Lambda=-3.0)
    sol = solve_spherical(power_law_matter(Lambda=-3.0), ga, f0=0.6)
    _, rf = ode_residuals(sol)
    assert rf.max() < 1e-9
    assert np.allclose(sol.N ** -2, 1 + sol.r**2 - 0.6 / sol.r, rtol=1e-13)


def test_degenerate_interior():
    g = grid(2.0, 40.0)
    with pytest.raises(DegenerateMetricError) as info:
        lapse_from_f(2.5 / g.nodes, g)
    assert info.value.radius == pytest.approx(2.0)
    with pytest.raises(DegenerateMetricError):
        solve_spherical(power_law_matter(), g, f0=3.0)


def test_select_f0_minimal_and_horizon():
    g = grid(2.0, 40.0)
    m = power_law_matter()
    p = solve_p(m, g)
    assert select_f0("minimal", p, m, g) == 2.0
    assert select_f0("generalized_horizon", p, m, g) == 2.0
    assert select_f0("prescribed", p, m, g, value=0.5) == pytest.approx(2.0 * 0.75)


def test_select_f0_matches_bisection():
    g = grid(1.0, 40.0)
    m = power_law_matter(A_j=1 / (4 * np.pi), decay_b=2.0)
    prof = RadialProfile(m, g)
    assert prof(1.0) == pytest.approx(1.0, rel=1e-12)
    f0 = select_f0("generalized_horizon", prof, m, g)

    def boundary_gap(x):
        # 1/N(r0) from the closed-form f(r0) = x / r0 minus |r0 p(r0)|
        return np.sqrt(max(1.0 - x / g.r0, 0.0)) - abs(g.r0 * float(prof(g.r0)))
    ref = optimize.bisect(boundary_gap, -1.0, 0.5, xtol=1e-14)
    assert f0 == pytest.approx(ref, abs=1e-12)
    assert abs(f0) < 1e-12


def test_select_f0_errors():
    g = grid()
    m = power_law_matter()
    p = solve_p(m, g)
    with pytest.raises(InvalidFChoiceError):
        select_f0("prescribed", p, m, g)
    with pytest.raises(InvalidFChoiceError):
        select_f0("prescribed", p, m, g, value=-0.1)
    with pytest.raises(InvalidFChoiceError):
        select_f0("nearest", p, m, g)


def test_static_potential_schwarzschild_and_flat():
    g = grid(2.0, 40.0)
    sol = solve_spherical(power_law_matter(), g, "minimal")
    h, zeros = static_potential(sol)
    assert np.allclose(h, 1 - 2.0 / g.nodes, atol=1e-15)
    assert zeros == [2.0]
    flat = solve_spherical(power_law_matter(), g, f0=0.0)
    h, zeros = static_potential(flat)
    assert np.all(h == 1.0) and zeros == []


def test_static_potential_matter_run():
    g = grid(1.0, 40.0)
    sol = solve_spherical(power_law_matter(A_mu=0.02, decay_c=4.0), g, "minimal")
    h, zeros = static_potential(sol)
    assert zeros == [1.0]
    assert np.all(h[1:] > 0)


def test_solution_records_boundary():
    g = grid()
    assert solve_spherical(power_law_matter(), g, "minimal").boundary == "minimal"
    assert solve_spherical(power_law_matter(), g, f0=0.5).boundary == "explicit_f0"


def test_csv_columns(tmp_path):
    sol = solve_spherical(power_law_matter(A_mu=0.01), grid(), "minimal")
    path = tmp_path / "radial.csv"
    sol.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[1] == "r,p,f,N,h"
    table = np.loadtxt(path, delimiter=",", skiprows=2)
    assert table.shape == (200, 5)
    assert np.array_equal(table[:, 0], sol.r)


@given(amu=st.floats(0.0, 0.05), aj=st.floats(-0.05, 0.05), ak=st.floats(-0.3, 0.3),
       b=st.floats(1.6, 3.0), c=st.floats(2.6, 5.0))
@settings(max_examples=15, deadline=None)
def test_random_models_satisfy_odes(amu, aj, ak, b, c):
    m = power_law_matter(A_mu=amu, A_j=aj, A_k=ak, decay_b=b, decay_c=c)
    sol = solve_spherical(m, grid(1.0, 30.0, 120), f0=0.0 if amu == 0 else -0.5)
    rp, rf = ode_residuals(sol)
    assert rp.max() < 1e-7
    assert rf.max() < 1e-7


@given(n=st.integers(3, 6))
@settings(max_examples=4, deadline=None)
def test_higher_dimension_odes(n):
    m = power_law_matter(A_mu=0.05, A_j=0.02, A_k=0.1, decay_b=n / 2 + 0.5, decay_c=n + 1.0, n=n)
    sol = solve_spherical(m, grid(1.0, 30.0, 120, n=n), f0=0.0)
    rp, rf = ode_residuals(sol)
    assert rp.max() < 1e-7 and rf.max() < 1e-7
