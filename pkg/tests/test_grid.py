"""Grid layout, Fourier derivatives, projection, and voxel indicators."""

import numpy as np
import pytest

from suspvisc.errors import ValidationError
from suspvisc.grid import (
    Grid,
    compact_to_tensor,
    sphere_indicator,
    sym_mult,
    sym_pairs,
    tensor_to_compact,
    wrap_delta,
)


def test_compact_layout_round_trips():
    rng = np.random.default_rng(0)
    for d in (2, 3):
        a = rng.normal(size=(d, d))
        sym = 0.5 * (a + a.T)
        back = compact_to_tensor(tensor_to_compact(sym, d), d)
        assert np.allclose(back, sym, atol=0, rtol=0)
        # Frobenius weights count off-diagonal components twice
        c = tensor_to_compact(sym, d)
        assert np.isclose(np.sum(sym_mult(d) * c * c), np.sum(sym * sym))


def test_sym_pairs_order():
    assert sym_pairs(2) == [(0, 0), (1, 1), (0, 1)]
    assert sym_pairs(3) == [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]


@pytest.mark.parametrize("d", [2, 3])
def test_fft_round_trip(d):
    grid = Grid(d, 2.0 * np.pi, 16)
    rng = np.random.default_rng(1)
    f = rng.normal(size=(d,) + grid.shape)
    assert np.allclose(grid.ifft(grid.fft(f)), f, atol=1e-13)


def test_spectral_derivative_exact_on_plane_wave():
    grid = Grid(2, 4.0, 32, scheme="spectral")
    x = grid.axes()
    k = 2.0 * np.pi * 3.0 / 4.0
    f = np.sin(k * x)[:, None] * np.ones((1, 32))
    df = grid.ifft(1j * grid.q[0] * grid.fft(f[None]))[0]
    assert np.allclose(df, k * np.cos(k * x)[:, None], atol=1e-11)


def test_nyquist_derivative_zeroed_both_schemes():
    for scheme in ("spectral", "fd"):
        grid = Grid(2, 4.0, 32, scheme=scheme)
        # the alternating-sign mode must be annihilated (real-output contract)
        x = grid.axes()
        f = np.cos(np.pi * x / grid.h)[:, None] * np.ones((1, 32))
        df = grid.ifft(1j * grid.q[0] * grid.fft(f[None]))[0]
        assert np.max(np.abs(df)) < 1e-12


def test_fd_frequencies_bounded_and_second_order():
    grid_s = Grid(2, 4.0, 64, scheme="spectral")
    grid_f = Grid(2, 4.0, 64, scheme="fd")
    # along zero transverse frequency the edge average drops out
    q = grid_s.q[0][:, 0]
    g = grid_f.q[0][:, 0]
    assert np.all(np.abs(g) <= np.abs(q) + 1e-14)
    low = np.abs(q) < 0.25 * np.pi / grid_s.h
    # modified frequency agrees with the true one to second order in h
    err = np.abs(g[low] - q[low])
    assert np.all(err <= 0.2 * np.abs(q[low]) ** 3 * grid_s.h**2 + 1e-14)
    # the transverse edge average attenuates but never amplifies
    assert np.all(np.abs(grid_f.q[0]) <= np.abs(q)[:, None] + 1e-14)


@pytest.mark.parametrize("scheme", ["spectral", "fd"])
def test_leray_projection(scheme):
    grid = Grid(3, 5.0, 16, scheme=scheme)
    rng = np.random.default_rng(2)
    v_hat = grid.fft(rng.normal(size=(3,) + grid.shape))
    p = grid.leray(v_hat)
    # divergence-free output, idempotent projection
    assert grid.hat_norm2(grid.divergence_hat(p)) < 1e-20 * max(grid.hat_norm2(p), 1e-30)
    assert np.allclose(grid.leray(p), p, atol=1e-13)


def test_hat_dot_matches_real_inner_product():
    grid = Grid(2, 3.0, 24)
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2,) + grid.shape)
    b = rng.normal(size=(2,) + grid.shape)
    lhs = grid.hat_dot(grid.fft(a), grid.fft(b))
    rhs = float(np.mean(np.sum(a * b, axis=0)))
    assert np.isclose(lhs, rhs, rtol=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_sphere_indicator_volume(d):
    L, n = 8.0, 64
    center = np.full((1, d), 3.37)
    vol = np.pi if d == 2 else 4.0 * np.pi / 3.0
    chi = sphere_indicator(d, L, n, center, smooth=True)
    assert abs(float(np.sum(chi)) * (L / n) ** d - vol) < 0.005 * vol
    sharp = sphere_indicator(d, L, n, center, smooth=False)
    assert abs(float(np.sum(sharp)) * (L / n) ** d - vol) < 0.05 * vol
    assert np.all((chi >= 0.0) & (chi <= 1.0))


def test_sphere_indicator_periodic_wrap():
    # a particle hugging the boundary keeps its full volume
    L, n = 8.0, 64
    inner = sphere_indicator(2, L, n, np.array([[4.0, 4.0]]))
    edge = sphere_indicator(2, L, n, np.array([[0.05, 4.0]]))
    assert np.isclose(np.sum(inner), np.sum(edge), rtol=1e-10)


def test_wrap_delta_range():
    L = 6.0
    deltas = wrap_delta(np.array([-5.9, -3.1, 0.0, 3.1, 5.9]), L)
    assert np.all(np.abs(deltas) <= L / 2.0 + 1e-12)
    assert np.isclose(deltas[0], 0.1)


def test_grid_validation():
    with pytest.raises(ValidationError):
        Grid(4, 1.0, 16)
    with pytest.raises(ValidationError):
        Grid(2, 1.0, 3)
    with pytest.raises(ValidationError):
        Grid(2, -1.0, 16)
    with pytest.raises(ValidationError):
        Grid(2, 1.0, 16, scheme="upwind")
