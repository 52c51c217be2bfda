import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radial_ids.errors import DecayThresholdError, DivergentTailError, NonPositiveLapseError
from radial_ids.family import exp_perturbed_family, tangent_generator
from radial_ids.matter import (
    AngularProfile,
    MatterModel,
    dec_margin,
    integrability_budgets,
    j_norm_g,
    power_law_matter,
    sphere_area,
    tangential_norm_sq,
)
from radial_ids.sphere import build_grid, integrate


@pytest.fixture(scope="module")
def grid():
    return build_grid(16, 32)


def test_vacuum_model(grid):
    m = power_law_matter()
    assert m.is_vacuum and m.is_spherical
    assert np.all(m.mu(2.0, grid) == 0) and np.all(m.j0(2.0, grid) == 0)
    assert np.all(m.jI(2.0, grid) == 0)


def test_decay_envelopes(grid):
    m = power_law_matter(A_mu={"1": 1.0, "z": 0.5}, A_j={"x": 0.3}, A_k=0.2, decay_b=2.5, decay_c=4.5)
    for r in (1.0, 4.0, 64.0):
        assert np.abs(m.mu(r, grid)).max() <= 1.5 * r**-4.5 * (1 + 1e-12)
        assert np.abs(m.j0(r, grid)).max() <= 0.3 * r**-3.5 * (1 + 1e-12)
        assert np.abs(m.k(r, grid)).max() <= 0.2 * r**-2.5 * (1 + 1e-12)


def test_mu_budget_closed_form():
    for r0 in (1.0, 2.5):
        bud = integrability_budgets(power_law_matter(A_mu=1.0, decay_c=4.0), r0, 1e4)
        assert bud.mu_budget + bud.mu_tail == pytest.approx(4 * np.pi / r0, rel=1e-10)


def test_mu_budget_grid_path(grid):
    bud = integrability_budgets(power_law_matter(A_mu=1.0), 1.0, 1e6, grid)
    assert bud.mu_budget == pytest.approx(4 * np.pi * (1 - 1e-6), rel=1e-10)


def test_vacuum_budgets():
    assert tuple(integrability_budgets(power_law_matter(), 1.0, 10.0))[:3] == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("kw,key", [(dict(decay_b=1.4), "decay_b"), (dict(decay_b=1.5), "decay_b"),
                                    (dict(decay_c=2.5), "decay_c")])
def test_decay_threshold(kw, key):
    with pytest.raises(DecayThresholdError) as info:
        power_law_matter(**kw)
    assert info.value.key == key


def test_divergent_tail_at_threshold():
    # bypass the validated constructor to reach the budget check itself
    m = MatterModel(A_j=AngularProfile.constant(1.0), decay_b=1.5)
    with pytest.raises(DivergentTailError):
        integrability_budgets(m, 1.0, 10.0)
    m = MatterModel(A_mu=AngularProfile.constant(1.0), decay_c=3.0)
    with pytest.raises(DivergentTailError):
        integrability_budgets(m, 1.0, 10.0)


def test_sphere_area():
    assert sphere_area(3) == pytest.approx(4 * np.pi)
    assert sphere_area(4) == pytest.approx(2 * np.pi**2)


def test_dec_margin_vacuum(grid):
    assert np.all(dec_margin(power_law_matter(), 3.0, np.ones(grid.size), grid) == 0.0)


@given(aj=st.floats(0.01, 2.0), N=st.floats(0.2, 5.0), r=st.floats(1.0, 30.0))
@settings(max_examples=30, deadline=None)
def test_dec_margin_identities(grid, aj, N, r):
    # with mu chosen as 2|J|_g the margin is |J|_g; with mu = |J_0|/(2N) it is negative
    probe = power_law_matter(A_j={"1": aj, "z": 0.3 * aj}, decay_b=2.0, decay_c=3.0,
                             jI_mode="umbilic_derived")
    Nf = np.full(grid.size, N)
    J = j_norm_g(probe, r, Nf, grid)
    scale = 2.0 * J * r**3.0
    mu_amp = float(scale.max())
    model = power_law_matter(A_mu=mu_amp, A_j={"1": aj, "z": 0.3 * aj}, decay_b=2.0, decay_c=3.0,
                             jI_mode="umbilic_derived")
    margin = dec_margin(model, r, Nf, grid)
    assert np.all(margin >= J - 1e-12 * mu_amp)
    assert np.isclose(margin[np.argmax(scale)], J[np.argmax(scale)], rtol=1e-10)

    explicit = power_law_matter(A_j={"1": aj}, decay_b=2.0, decay_c=3.0)
    j0 = explicit.j0(r, grid)
    half = power_law_matter(A_mu=aj / (2 * N), A_j={"1": aj}, decay_b=2.0, decay_c=3.0)
    # mu r^-3 and J_0 r^-3 share the radial factor
    assert np.all(dec_margin(half, r, Nf, grid) < 0) and np.all(j0 != 0)


def test_dec_margin_nonpositive_lapse(grid):
    with pytest.raises(NonPositiveLapseError):
        dec_margin(power_law_matter(A_j=0.1), 2.0, np.zeros(grid.size), grid)


def test_angular_profile_derivatives(grid):
    prof = AngularProfile({"1": 0.2, "x": 0.4, "yz": -0.3, "3z2-1": 0.1, "x2-y2": 0.25})
    t, p = grid.theta_nodes, grid.phi_nodes
    h = 1e-6
    dt, dp = prof.derivatives(t, p)
    assert np.allclose(dt, (prof(t + h, p) - prof(t - h, p)) / (2 * h), atol=1e-8)
    assert np.allclose(dp, (prof(t, p + h) - prof(t, p - h)) / (2 * h), atol=1e-8)
    assert np.abs(prof(t, p)).max() <= prof.bound()


def test_unknown_basis_rejected():
    with pytest.raises(ValueError):
        AngularProfile({"w": 1.0})


def test_umbilic_derived_angular_momentum(grid):
    m = power_law_matter(A_j={"1": 0.1, "z": 0.05}, decay_b=2.0, jI_mode="umbilic_derived")
    # J_I = -d_I A_J r^-b / b; only the z part contributes, along theta
    jI = m.jI(2.0, grid)
    assert np.allclose(jI[:, 0], 0.05 * grid.sin_theta * 2.0**-2 / 2.0)
    assert np.allclose(jI[:, 1], 0.0)


def test_tangential_norm_with_metric(grid):
    fam = exp_perturbed_family(grid, tangent_generator(grid, np.diag([1.0, -0.5, -0.5]), 0.1), 1.0, 1.0)
    jI = np.stack([grid.sin_theta, np.zeros(grid.size)], axis=1)
    round_norm = tangential_norm_sq(grid, jI)
    assert np.allclose(round_norm, grid.sin_theta**2)
    pert = tangential_norm_sq(grid, jI, fam.metric(1.0))
    assert integrate(grid, pert) != pytest.approx(integrate(grid, round_norm), rel=1e-6)
