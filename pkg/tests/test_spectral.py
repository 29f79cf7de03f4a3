"""Penalized corrector solves: Green operator identities, energy contracts,
force balance, clamped and forced variants."""

import numpy as np
import pytest

from suspvisc.ensembles import ParticleConfig
from suspvisc.errors import ValidationError
from suspvisc.grid import Grid, sym_mult, tensor_to_compact
from suspvisc.spectral import (
    SolverConfig,
    cross_dissipation,
    dissipation,
    force_torque,
    green_apply,
    mvp_ratio,
    random_solenoidal_field,
    solve_clamped,
    solve_corrector,
    solve_forced,
)
from suspvisc.viscosity import strain_basis


def empty_box(d, L=8.0):
    return ParticleConfig(d=d, L=L, centers=np.zeros((0, d)))


# ---------------------------------------------------------------- green_apply


def test_green_constant_field_maps_to_zero():
    tau = np.ones((3, 16, 16))
    out = green_apply(tau, 8.0)
    assert np.abs(out).max() < 1e-14


@pytest.mark.parametrize("d", [2, 3])
def test_green_single_mode_closed_form(d):
    # tau = T sin(q x_1) solves to u = -(1/(mu0 q)) cos(q x_1) P T e1 with
    # P the projector off e1, so -D(u) = -(1/mu0) sin(q x_1) sym(P T e1 x e1)
    L, n, mu0 = 8.0, 16, 1.7
    grid = Grid(d, L, n)
    x1 = np.meshgrid(*[grid.axes()] * d, indexing="ij")[0]
    q = 2.0 * np.pi / L
    rng = np.random.default_rng(5)
    T = rng.standard_normal((d, d))
    T = 0.5 * (T + T.T)
    tau = tensor_to_compact(np.sin(q * x1)[..., None, None] * T, d)
    v = T[:, 0] - T[0, 0] * np.eye(d)[0]
    M = 0.5 * (np.outer(v, np.eye(d)[0]) + np.outer(np.eye(d)[0], v))
    expect = tensor_to_compact(np.sin(q * x1)[..., None, None] * (-M / mu0), d)
    out = green_apply(tau, L, mu0=mu0)
    assert np.abs(out - expect).max() < 1e-12


def test_green_self_adjoint():
    L, n = 8.0, 16
    rng = np.random.default_rng(9)
    a = rng.standard_normal((3, n, n))
    b = rng.standard_normal((3, n, n))
    mults = sym_mult(2).reshape(-1, 1, 1)
    lhs = np.mean(np.sum(mults * a * green_apply(b, L), axis=0))
    rhs = np.mean(np.sum(mults * green_apply(a, L) * b, axis=0))
    assert abs(lhs - rhs) < 1e-13


def test_green_involution_identity():
    # applying the operator to 2 mu0 times its own output flips the sign:
    # the second solve sees minus the original forcing up to a gradient
    L, mu0 = 8.0, 1.3
    rng = np.random.default_rng(1)
    tau = rng.standard_normal((6, 12, 12, 12))
    gt = green_apply(tau, L, mu0=mu0)
    again = green_apply(2.0 * mu0 * gt, L, mu0=mu0)
    assert np.abs(again + gt).max() < 1e-12


def test_green_validation():
    with pytest.raises(ValidationError):
        green_apply(np.ones((4, 8, 8)), 8.0)  # not a compact layout
    with pytest.raises(ValidationError):
        green_apply(np.ones((3, 8, 8)), 8.0, mu0=0.0)
    bad = np.ones((3, 8, 8))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValidationError):
        green_apply(bad, 8.0)


# ------------------------------------------------------------ solve_corrector


def test_empty_box_corrector_is_exact(E2):
    field = solve_corrector(empty_box(2), E2, SolverConfig(n=32, theta=1e2))
    assert np.abs(field.velocity()).max() < 1e-12
    assert abs(field.dissipation - np.sum(E2 * E2)) < 1e-12


def test_corrector_zero_mean_and_divergence_free(solved2d):
    assert solved2d.zero_mean_error < 1e-12
    grid = solved2d.grid()
    div_hat = sum(1j * grid.q[j] * solved2d.psi_hat[j] for j in range(2))
    assert np.abs(grid.ifft(div_hat[None])[0]).max() < 1e-10


def test_corrector_dissipation_exceeds_strain_energy(solved2d, E2):
    # inclusions only add energy relative to the homogeneous medium
    assert solved2d.dissipation > np.sum(E2 * E2) + 1e-3


def test_theta_monotone_dissipation(theta_sweep):
    vals = [theta_sweep[t].dissipation for t in (1e2, 1e3, 1e4)]
    assert vals[0] < vals[1] < vals[2]


def test_rigidity_residual_drops_with_theta(theta_sweep):
    rig = [theta_sweep[t].rigidity_residual for t in (1e2, 1e3, 1e4)]
    assert rig[0] > 5.0 * rig[1] > 25.0 * rig[2]


def test_corrector_determinism(rsa2d, E2):
    sc = SolverConfig(n=32, theta=1e2, tol=1e-7)
    a = solve_corrector(rsa2d, E2, sc)
    b = solve_corrector(rsa2d, E2, sc)
    assert np.array_equal(a.Dpsi, b.Dpsi)
    assert a.dissipation == b.dissipation


def test_corrector_frame_consistency(rsa2d, E2):
    # swapping the two axes of geometry and strain together must not change
    # the scalar dissipation
    sc = SolverConfig(n=48, theta=1e3, tol=1e-9)
    base = solve_corrector(rsa2d, E2, sc).dissipation
    swapped = ParticleConfig(
        d=2, L=rsa2d.L, centers=rsa2d.centers[:, ::-1], gap=rsa2d.gap
    )
    E_sw = E2[::-1, :][:, ::-1]
    other = solve_corrector(swapped, E_sw, sc).dissipation
    assert abs(base - other) < 1e-7 * base


def test_low_resolution_warning(E2):
    cfg = ParticleConfig(d=2, L=16.0, centers=np.array([[8.0, 8.0]]))
    with pytest.warns(UserWarning, match="voxels per"):
        solve_corrector(cfg, E2, SolverConfig(n=32, theta=1e2, tol=1e-3, max_iter=50))


def test_strain_validation(rsa2d):
    sc = SolverConfig(n=32, theta=1e2)
    with pytest.raises(ValidationError, match="symmetric"):
        solve_corrector(rsa2d, np.array([[0.0, 1.0], [0.0, 0.0]]), sc)
    with pytest.raises(ValidationError, match="trace"):
        solve_corrector(rsa2d, np.eye(2), sc)
    with pytest.raises(ValidationError, match="2x2"):
        solve_corrector(rsa2d, np.zeros((3, 3)), sc)


def test_solver_config_validation():
    with pytest.raises(ValidationError):
        SolverConfig(n=8)
    with pytest.raises(ValidationError):
        SolverConfig(theta=1.0)
    with pytest.raises(ValidationError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValidationError):
        SolverConfig(scheme="upwind")
    with pytest.raises(ValidationError):
        SolverConfig(blend="arithmetic-ish")


# ----------------------------------------------------- bilinear energy forms


def test_dissipation_accessor_matches_attribute(solved2d, rsa2d):
    assert dissipation(solved2d, rsa2d, 1e3) == solved2d.dissipation


def test_dissipation_mismatch_raises(solved2d, rsa2d):
    with pytest.raises(ValidationError, match="theta"):
        dissipation(solved2d, rsa2d, 1e4)
    other = ParticleConfig(d=2, L=8.0, centers=np.array([[4.0, 4.0]]))
    with pytest.raises(ValidationError, match="configuration"):
        dissipation(solved2d, other, 1e3)


def test_cross_dissipation_polarization(rsa2d):
    # the bilinear form agrees with the quarter difference of quadratic
    # energies at summed and differenced strains
    basis = strain_basis(2)
    Ea, Eb = basis[0], basis[1]
    sc = SolverConfig(n=32, theta=1e2, tol=1e-9)
    fa = solve_corrector(rsa2d, Ea, sc)
    fb = solve_corrector(rsa2d, Eb, sc)
    x_ab = cross_dissipation(fa, fb, rsa2d, 1e2)
    x_ba = cross_dissipation(fb, fa, rsa2d, 1e2)
    assert abs(x_ab - x_ba) < 1e-12
    f_sum = solve_corrector(rsa2d, Ea + Eb, sc)
    f_dif = solve_corrector(rsa2d, Ea - Eb, sc)
    polarized = 0.25 * (f_sum.dissipation - f_dif.dissipation)
    assert abs(x_ab - polarized) < 1e-8


def test_cross_dissipation_grid_mismatch_raises(rsa2d, solved2d, E2):
    other = solve_corrector(rsa2d, E2, SolverConfig(n=32, theta=1e3, tol=1e-7))
    with pytest.raises(ValidationError, match="different grids"):
        cross_dissipation(solved2d, other, rsa2d, 1e3)


# ---------------------------------------------------------------- force_torque


def test_force_torque_vanishes_at_equilibrium(E2):
    cfg = ParticleConfig(d=2, L=12.0, centers=np.array([[4.0, 6.0], [8.0, 6.0]]), gap=0.5)
    field = solve_corrector(cfg, E2, SolverConfig(n=64, theta=1e3, tol=1e-8))
    results = force_torque(field, cfg)
    assert len(results) == 2
    for F, T in results:
        assert F.shape == (2,)
        assert np.size(T) == 1
        assert np.abs(F).max() < 1e-4
        assert np.abs(T).max() < 1e-4


def test_force_torque_empty(E2):
    field = solve_corrector(empty_box(2), E2, SolverConfig(n=32, theta=1e2))
    assert force_torque(field, empty_box(2)) == []


def test_force_torque_wrong_config_raises(solved2d):
    other = ParticleConfig(d=2, L=8.0, centers=np.array([[4.0, 4.0]]))
    with pytest.raises(ValidationError):
        force_torque(solved2d, other)


# -------------------------------------------------------------- solve_clamped


def test_clamped_tracks_solenoidal_target():
    d, L, n = 2, 8.0, 32
    rng = np.random.default_rng(3)
    v = random_solenoidal_field(d, L, n, kmax=2, rng=rng)
    sc = SolverConfig(n=n, theta=1e2, kappa=1e4, tol=1e-9)
    field = solve_clamped(empty_box(2), np.ones((n, n)), v, np.zeros((d, d)), sc)
    assert field.clamp_mismatch < 1e-3
    u = field.velocity()
    corr = np.sum(u * v) / np.sqrt(np.sum(u * u) * np.sum(v * v))
    assert corr > 0.999


def test_clamped_energy_dominates_plain_corrector(rsa2d, E2):
    # the clamp is an extra constraint, so the strain energy of its minimizer
    # cannot undercut the unconstrained corrector
    n = 32
    sc_plain = SolverConfig(n=n, theta=1e2, tol=1e-9)
    plain = solve_corrector(rsa2d, E2, sc_plain)
    grid = Grid(2, rsa2d.L, n)
    ax = grid.axes()
    mesh = np.meshgrid(ax, ax, indexing="ij")
    dist = np.sqrt(sum((g - rsa2d.L / 2.0) ** 2 for g in mesh))
    mask = (dist >= 3.0).astype(float)
    sc = SolverConfig(n=n, theta=1e2, kappa=1e3, tol=1e-9)
    clamped = solve_clamped(rsa2d, mask, np.zeros((2, n, n)), E2, sc)
    assert clamped.dissipation >= plain.dissipation - 1e-10


def test_clamped_requires_kappa(rsa2d, E2):
    n = 16
    with pytest.raises(ValidationError, match="kappa"):
        solve_clamped(rsa2d, np.ones((n, n)), np.zeros((2, n, n)), E2,
                      SolverConfig(n=n, theta=1e2, kappa=0.0))


def test_clamped_shape_mismatch(rsa2d, E2):
    sc = SolverConfig(n=16, theta=1e2, kappa=1.0)
    with pytest.raises(ValidationError, match="shapes"):
        solve_clamped(rsa2d, np.ones((8, 8)), np.zeros((2, 16, 16)), E2, sc)


# --------------------------------------------------------------- solve_forced


def test_forced_zero_force_is_still():
    n = 16
    f = np.zeros((2, n, n))
    u, field = solve_forced(empty_box(2), f, SolverConfig(n=n, theta=1e2))
    assert np.abs(u).max() < 1e-14
    assert field.kind == "forced"


def test_forced_single_mode_closed_form():
    # transverse cosine forcing in an empty box: u = f / q^2 exactly
    d, L, n = 2, 8.0, 32
    sc = SolverConfig(n=n, theta=1e2, tol=1e-11, scheme="spectral")
    grid = Grid(d, L, n)
    x = np.meshgrid(*[grid.axes()] * d, indexing="ij")
    q = 2.0 * np.pi / L
    f = np.zeros((d, n, n))
    f[0] = np.cos(q * x[1])
    u, _ = solve_forced(empty_box(2), f, sc)
    assert np.abs(u - f / q**2).max() < 1e-8


def test_forced_rejects_nonzero_mean():
    n = 16
    f = np.zeros((2, n, n))
    f[1] = 1.0
    with pytest.raises(ValidationError, match="zero mean"):
        solve_forced(empty_box(2), f, SolverConfig(n=n, theta=1e2))


def test_forced_sedimentation_has_zero_mean_flow():
    # a heavy particle balanced by uniform backflow: net flux stays zero
    from suspvisc.grid import sphere_indicator

    d, L, n = 2, 8.0, 48
    cfg = ParticleConfig(d=d, L=L, centers=np.array([[4.0, 4.0]]))
    chi = sphere_indicator(d, L, n, cfg.centers, grid_offset=0.0)
    f = np.zeros((d, n, n))
    f[1] = -(chi - chi.mean())
    u, field = solve_forced(cfg, f, SolverConfig(n=n, theta=1e3, tol=1e-9))
    means = np.abs(u.reshape(d, -1).mean(axis=1))
    assert means.max() < 1e-10
    assert np.abs(u).max() > 1e-4


# ------------------------------------------------------------------ mvp_ratio


def test_mvp_translation_sample_is_flagged():
    n = 32
    v = np.zeros((2, n, n))
    v[0] = 1.0  # rigid translation carries no gradient energy
    sc = SolverConfig(n=n, theta=1e2, kappa=1e3)
    ratios, worst = mvp_ratio(empty_box(2), 3.0, [v], sc)
    assert ratios == [None]
    assert worst is None


def test_mvp_interior_ratio_below_one():
    d, L, n = 2, 8.0, 48
    rng = np.random.default_rng(7)
    v = random_solenoidal_field(d, L, n, kmax=2, rng=rng)
    sc = SolverConfig(n=n, theta=1e3, kappa=1e4, tol=1e-8)
    cfg = ParticleConfig(d=d, L=L, centers=np.array([[4.0, 4.0]]))
    ratios, worst = mvp_ratio(cfg, 3.5, [v], sc)
    assert len(ratios) == 1 and ratios[0] is not None
    assert 0.0 < worst < 1.5


def test_mvp_validation():
    n = 32
    sc_nokappa = SolverConfig(n=n, theta=1e2, kappa=0.0)
    with pytest.raises(ValidationError, match="clamp"):
        mvp_ratio(empty_box(2), 3.0, [], sc_nokappa)
    sc = SolverConfig(n=n, theta=1e2, kappa=1.0)
    with pytest.raises(ValidationError, match="R <= L/2"):
        mvp_ratio(empty_box(2), 5.0, [], sc)
    off_center = ParticleConfig(d=2, L=8.0, centers=np.array([[1.0, 1.0]]))
    with pytest.raises(ValidationError, match="inside"):
        mvp_ratio(off_center, 3.0, [], sc)


def test_random_solenoidal_field_contract():
    d, L, n = 2, 8.0, 32
    v = random_solenoidal_field(d, L, n, kmax=3, rng=np.random.default_rng(0))
    assert abs(np.sqrt(np.mean(v**2)) - 1.0) < 1e-12
    grid = Grid(d, L, n)
    v_hat = grid.fft(v)
    div = grid.ifft(sum(1j * grid.q[j] * v_hat[j] for j in range(d))[None])[0]
    assert np.abs(div).max() < 1e-12
    assert np.abs(v.reshape(d, -1).mean(axis=1)).max() < 1e-13
