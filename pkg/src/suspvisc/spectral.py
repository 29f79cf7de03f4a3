"""Periodic variable-viscosity Stokes solves on a voxel grid.

Rigid particles are represented by penalization: the quadratic energy

    sum_x w(x) |D(psi) + E|^2,    w = 1 + theta * chi_I,

is minimized over periodic divergence-free psi.  The normal equations are
solved by preconditioned conjugate gradients in Fourier space, with the
constant-viscosity Stokes Green operator as preconditioner; all fields stay
divergence-free mode by mode, and D(psi) has exactly zero voxel mean.

Stress convention: sigma = 2 w (D(psi) + E) - p Id, so the recovered pressure
makes div sigma equal (twice) the projected equilibrium residual exactly.
"""

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ValidationError
from .grid import Grid, sphere_indicator, sym_mult, sym_pairs, tensor_to_compact, wrap_delta


@dataclass(frozen=True)
class SolverConfig:
    """Grid resolution and penalization parameters for one solve."""

    n: int = 64
    theta: float = 1e3
    kappa: float = 0.0
    tol: float = 1e-6
    max_iter: int = 4000
    smooth: bool = True
    scheme: str = "fd"
    blend: str = "harmonic"

    def __post_init__(self):
        if self.n < 16:
            raise ValidationError(f"grid resolution must be at least 16, got {self.n}")
        if not 10.0 <= self.theta <= 1e6:
            raise ValidationError(f"penalization must lie in [10, 1e6], got {self.theta}")
        if not 0.0 < self.tol <= 1e-3:
            raise ValidationError(f"tolerance must lie in (0, 1e-3], got {self.tol}")
        if self.kappa < 0.0:
            raise ValidationError("clamp strength must be nonnegative")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be positive")
        if self.scheme not in ("spectral", "fd"):
            raise ValidationError(f"unknown derivative scheme {self.scheme!r}")
        if self.blend not in ("linear", "geometric", "harmonic"):
            raise ValidationError(f"unknown coefficient blend {self.blend!r}")


@dataclass
class CorrectorField:
    """Solution of one penalized solve plus residual metadata."""

    kind: str                      # corrector | clamped | forced
    d: int
    L: float
    n: int
    theta: float
    smooth: bool
    scheme: str
    blend: str
    E: np.ndarray
    centers_digest: str
    psi_hat: np.ndarray            # (d, hat) complex velocity modes
    Dpsi: np.ndarray               # (ncomp, grid) real symmetric gradient
    pressure_hat: np.ndarray
    residual: float
    residual_history: list
    iterations: int
    dissipation: float
    rigidity_residual: float | None
    zero_mean_error: float
    clamp_mismatch: float | None = None

    def grid(self):
        return Grid(self.d, self.L, self.n, scheme=self.scheme)

    def solver_config(self, **overrides):
        """SolverConfig matching how this field was solved."""
        kw = dict(n=self.n, theta=self.theta, smooth=self.smooth,
                  scheme=self.scheme, blend=self.blend)
        kw.update(overrides)
        return SolverConfig(**kw)

    def velocity(self):
        """Real-space velocity field (d, n, ..., n)."""
        return self.grid().ifft(self.psi_hat)

    def pressure(self):
        return self.grid().ifft(self.pressure_hat)


def config_digest(config, extra=()):
    """Stable fingerprint of the particle geometry a field was solved on."""
    h = hashlib.sha256()
    h.update(np.asarray([config.d, config.L, config.gap], dtype=float).tobytes())
    h.update(np.ascontiguousarray(config.centers, dtype=float).tobytes())
    for item in extra:
        h.update(repr(item).encode())
    return h.hexdigest()[:16]


def _check_strain(d, E):
    E = np.asarray(E, dtype=float)
    if E.shape != (d, d):
        raise ValidationError(f"strain must be {d}x{d}, got {E.shape}")
    if not np.allclose(E, E.T, atol=1e-12):
        raise ValidationError("strain must be symmetric")
    if abs(np.trace(E)) > 1e-10 * max(1.0, np.abs(E).max()):
        raise ValidationError("strain must be trace-free")
    return E


def _weight_field(config, sc):
    grid = Grid(config.d, config.L, sc.n, scheme=sc.scheme)
    if 2.0 / grid.h < 8.0:
        warnings.warn(
            f"grid resolves particle diameters with only {2.0 / grid.h:.1f} voxels"
        )
    # the fd stencil differences corner-shifted values, so its coefficients
    # live on the corner lattice
    offset = 0.0 if sc.scheme == "fd" else 0.5
    chi = sphere_indicator(
        config.d, config.L, sc.n, config.centers, smooth=sc.smooth, grid_offset=offset
    )
    if sc.blend == "geometric":
        w = np.exp(np.log1p(sc.theta) * chi)
    elif sc.blend == "harmonic":
        w = 1.0 / (1.0 - chi + chi / (1.0 + sc.theta))
    else:
        w = 1.0 + sc.theta * chi
    return grid, chi, w


def green_apply(tau, L, mu0=1.0):
    """Constant-viscosity Stokes Green operator acting on a polarization field.

    tau is a compact symmetric-tensor voxel field (ncomp, n, ..., n).  Returns
    -D(u) in the same layout, where u is the unique mean-zero periodic
    divergence-free velocity with -mu0 lap(u) + grad p = -div tau.  The zero
    mode maps to zero.
    """
    tau = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise ValidationError("polarization field must be finite")
    ncomp = tau.shape[0]
    nd = tau.ndim - 1
    d = {3: 2, 6: 3}.get(ncomp)
    if d is None or d != nd:
        raise ValidationError(f"expected compact layout (d(d+1)/2, n^d), got {tau.shape}")
    if mu0 <= 0:
        raise ValidationError("reference viscosity must be positive")
    grid = Grid(d, L, tau.shape[1])
    tau_hat = grid.fft(tau)
    rhs = -grid.stress_div_hat(tau_hat)  # (-div tau)^
    u_hat = grid.leray(rhs) / (mu0 * grid._q2_safe)
    u_hat[(slice(None),) + (0,) * d] = 0.0
    return -grid.ifft(grid.strain_hat(u_hat))


def _pcg(grid, apply_A, b_hat, mult, tol, max_iter):
    """Preconditioned CG on divergence-free hat fields; returns (x, history)."""
    nb = np.sqrt(grid.hat_norm2(b_hat))
    x = np.zeros_like(b_hat)
    history = []
    if nb == 0.0:
        return x, history
    r = b_hat.copy()
    z = r * mult
    p = z.copy()
    rz = grid.hat_dot(r, z)
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        alpha = rz / grid.hat_dot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.sqrt(grid.hat_norm2(r)) / nb
        history.append(res)
        if res <= tol:
            return x, history
        z = r * mult
        rz_new = grid.hat_dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations (residual {history[-1]:.3e})",
        residual=history[-1],
        iterations=max_iter,
    )


def _recover_pressure(grid, s_hat):
    """Pressure making div(2 s - p Id) purely divergence-free (residual-only)."""
    div_s = grid.stress_div_hat(s_hat)
    qd = sum(grid.q[i] * div_s[i] for i in range(grid.d))
    p_hat = -2j * qd / grid._q2_safe
    p_hat[(0,) * grid.d] = 0.0
    return p_hat


def _solve(config, E, sc, kind, mask=None, target=None, force_hat=None):
    grid, chi, w = _weight_field(config, sc)
    d = config.d
    keep_mean = kind == "clamped"
    Ec = tensor_to_compact(E, d).reshape((-1,) + (1,) * d) if np.any(E) else None

    def apply_A(x_hat):
        s = grid.ifft(grid.strain_hat(x_hat))
        s *= w
        out = -grid.stress_div_hat(grid.fft(s))
        if kind == "clamped":
            u = grid.ifft(x_hat)
            out += sc.kappa * grid.fft(mask * u)
        return grid.leray(out, keep_mean=keep_mean)

    b = np.zeros((d,) + grid.hat_shape, dtype=complex)
    if Ec is not None:
        b += grid.stress_div_hat(grid.fft(w * Ec))  # -D*(wE) = +div(wE)
    if kind == "clamped":
        b += sc.kappa * grid.fft(mask * target)
    if force_hat is not None:
        b += 0.5 * force_hat
    b = grid.leray(b, keep_mean=keep_mean)
    if kind != "clamped":
        # modes with no spectral derivative (zero/Nyquist) are null for A
        b[:, grid.q2 == 0.0] = 0.0

    shift = 2.0 * sc.kappa * float(np.mean(mask)) if kind == "clamped" else 0.0
    if shift > 0:
        mult = 2.0 / (grid.q2 + shift)
    else:
        mult = 2.0 / grid._q2_safe
        mult = mult.copy()
        mult[(0,) * d] = 0.0

    psi_hat, history = _pcg(grid, apply_A, b, mult, sc.tol, sc.max_iter)

    Dpsi = grid.ifft(grid.strain_hat(psi_hat))
    mults = sym_mult(d).reshape((-1,) + (1,) * d)
    tot = Dpsi + (Ec if Ec is not None else 0.0)
    e_density = np.sum(mults * tot * tot, axis=0)
    diss = float(np.mean(w * e_density))
    # residual strain inside the particles proper, excluding surface voxels
    interior = chi >= 0.999
    n_int = int(interior.sum())
    rigidity = float(np.mean(e_density[interior])) if n_int else None
    zero_mean = float(np.abs(np.mean(Dpsi.reshape(len(Dpsi), -1), axis=1)).max())
    s_hat = grid.fft(w * tot)
    p_hat = _recover_pressure(grid, s_hat)
    mismatch = None
    if kind == "clamped":
        u = grid.ifft(psi_hat)
        denom = float(np.sum(mask))
        mismatch = float(np.sum(mask * np.sum((u - target) ** 2, axis=0)) / max(denom, 1.0))
    return CorrectorField(
        kind=kind,
        d=d,
        L=config.L,
        n=sc.n,
        theta=sc.theta,
        smooth=sc.smooth,
        scheme=sc.scheme,
        blend=sc.blend,
        E=np.asarray(E, dtype=float),
        centers_digest=config_digest(config),
        psi_hat=psi_hat,
        Dpsi=Dpsi,
        pressure_hat=p_hat,
        residual=history[-1] if history else 0.0,
        residual_history=history,
        iterations=len(history),
        dissipation=diss,
        rigidity_residual=rigidity,
        zero_mean_error=zero_mean,
        clamp_mismatch=mismatch,
    )


def solve_corrector(config, E, sc):
    """Penalized periodic corrector for the strain E on the given configuration."""
    E = _check_strain(config.d, E)
    vox_per_diam = 2.0 * sc.n / config.L
    if config.n_particles and vox_per_diam < 8.0:
        warnings.warn(
            f"grid resolves particles with only {vox_per_diam:.1f} voxels per "
            "diameter (below the recommended 8)"
        )
    return _solve(config, E, sc, kind="corrector")


def solve_clamped(config, mask, target, E, sc):
    """Corrector solve with an additional kappa |u - target|^2 penalty on mask."""
    if sc.kappa <= 0:
        raise ValidationError("clamped solves need kappa > 0")
    E = _check_strain(config.d, E) if np.any(E) else np.zeros((config.d, config.d))
    grid = Grid(config.d, config.L, sc.n, scheme=sc.scheme)
    mask = np.asarray(mask, dtype=float)
    target = np.asarray(target, dtype=float)
    if mask.shape != grid.shape or target.shape != (config.d,) + grid.shape:
        raise ValidationError("mask/target shapes must match the solver grid")
    return _solve(config, E, sc, kind="clamped", mask=mask, target=target)


def solve_forced(config, f, sc):
    """Velocity response to a mean-zero body force with penalized rigid particles.

    Solves -div(2 w D(u)) + grad p = f.  Returns (velocity field, CorrectorField).
    """
    grid = Grid(config.d, config.L, sc.n, scheme=sc.scheme)
    f = np.asarray(f, dtype=float)
    if f.shape != (config.d,) + grid.shape:
        raise ValidationError("force shape must be (d, n, ..., n) on the solver grid")
    scale = float(np.sqrt(np.mean(f**2)))
    means = np.abs(f.reshape(config.d, -1).mean(axis=1))
    if scale > 0 and means.max() > 1e-10 * scale:
        raise ValidationError("body force must have zero mean (no periodic solution)")
    field = _solve(
        config,
        np.zeros((config.d, config.d)),
        sc,
        kind="forced",
        force_hat=grid.fft(f),
    )
    return field.velocity(), field


def dissipation(field, config, theta):
    """Voxel average of (1 + theta chi) |D(psi) + E|^2 for a solved field."""
    _check_field_match(field, config, theta)
    return field.dissipation


def cross_dissipation(fa, fb, config, theta):
    """Bilinear dissipation form between two solves on one configuration."""
    _check_field_match(fa, config, theta)
    _check_field_match(fb, config, theta)
    if fa.n != fb.n or fa.smooth != fb.smooth or fa.scheme != fb.scheme or fa.blend != fb.blend:
        raise ValidationError("fields were solved on different grids")
    d = config.d
    _, _, w = _weight_field(config, fa.solver_config(theta=theta))
    mults = sym_mult(d).reshape((-1,) + (1,) * d)
    ta = fa.Dpsi + tensor_to_compact(fa.E, d).reshape((-1,) + (1,) * d)
    tb = fb.Dpsi + tensor_to_compact(fb.E, d).reshape((-1,) + (1,) * d)
    return float(np.mean(w * np.sum(mults * ta * tb, axis=0)))


def _check_field_match(field, config, theta):
    if field.centers_digest != config_digest(config):
        raise ValidationError("field was solved on a different configuration")
    if abs(field.theta - theta) > 0:
        raise ValidationError(f"field was solved at theta={field.theta}, not {theta}")


# ---------------------------------------------------------------------------
# force and torque residuals


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _radial_cutoff(grid, center, r1, r2):
    """C^1 cutoff: 1 inside r1, 0 beyond r2, with the periodic distance."""
    ax = grid.axes()
    deltas = [wrap_delta(ax - center[k], grid.L) for k in range(grid.d)]
    mesh = np.meshgrid(*deltas, indexing="ij")
    dist = np.sqrt(sum(g**2 for g in mesh))
    eta = _smoothstep((r2 - dist) / (r2 - r1))
    return eta, mesh


def force_torque(field, config):
    """Net hydrodynamic force and torque per particle via the volumetric weak form.

    Pairs div(sigma) with per-particle test fields e_i eta and (rotation) eta,
    where eta is a radial cutoff whose gradient is supported in the fluid
    shell; gradients of the test fields are taken spectrally, so the result
    measures the discrete equilibrium residual exactly.  Both vanish at
    equilibrium; d=2 torque is the scalar component.
    """
    d = config.d
    grid, chi, w = _weight_field(config, field.solver_config())
    if field.centers_digest != config_digest(config):
        raise ValidationError("field was solved on a different configuration")
    if config.n_particles == 0:
        return []
    Ec = tensor_to_compact(field.E, d).reshape((-1,) + (1,) * d) if np.any(field.E) else 0.0
    s_hat = grid.fft(w * (field.Dpsi + Ec))
    p_hat = field.pressure_hat
    pairs = sym_pairs(d)
    comp_of = {pair: idx for idx, pair in enumerate(pairs)}

    # shell radii per particle, shrunk when neighbors are close
    centers = config.centers
    nmin = np.full(config.n_particles, config.L)
    if config.n_particles > 1:
        diff = wrap_delta(centers[:, None, :] - centers[None, :, :], config.L)
        dmat = np.sqrt(np.sum(diff**2, axis=-1))
        np.fill_diagonal(dmat, np.inf)
        nmin = dmat.min(axis=1)
    h = grid.h
    results = []
    for idx in range(config.n_particles):
        r1 = 1.0 + max(1.5 * h, 0.08)
        r2 = r1 + max(2.0 * h, 0.12)
        cap = min(nmin[idx] - 1.0 - h, config.L / 2.0 - h)
        if r2 > cap:
            warnings.warn(f"tight fluid shell around particle {idx}; shrinking")
            r2 = cap
            r1 = max(1.0 + h, r2 - max(2.0 * h, 0.12))
        if not r2 > r1 > 1.0:
            raise ValidationError(f"no fluid shell available around particle {idx}")
        eta, mesh = _radial_cutoff(grid, centers[idx], r1, r2)
        eta_hat = grid.fft(eta)
        vol = grid.L**d

        def stress_pair(i, j, test_hat):
            # <sigma_ij, test> over the box, sigma = 2 s - p Id
            val = 2.0 * grid.hat_dot(s_hat[comp_of[(min(i, j), max(i, j))]], test_hat)
            if i == j:
                val -= grid.hat_dot(p_hat, test_hat)
            return val * vol

        F = np.zeros(d)
        for i in range(d):
            F[i] = -sum(stress_pair(i, j, 1j * grid.q[j] * eta_hat) for j in range(d))
        if d == 2:
            v = np.stack([-mesh[1] * eta, mesh[0] * eta])
            v_hat = grid.fft(v)
            T = -sum(
                stress_pair(k, j, 1j * grid.q[j] * v_hat[k])
                for k in range(d)
                for j in range(d)
            )
            results.append((F, float(T)))
        else:
            T = np.zeros(3)
            rvec = np.stack(mesh)
            for a in range(3):
                e = np.zeros(3)
                e[a] = 1.0
                v = np.cross(e, np.moveaxis(rvec, 0, -1)) * eta[..., None]
                v_hat = grid.fft(np.moveaxis(v, -1, 0))
                T[a] = -sum(
                    stress_pair(k, j, 1j * grid.q[j] * v_hat[k])
                    for k in range(3)
                    for j in range(3)
                )
            results.append((F, T))
    return results


# ---------------------------------------------------------------------------
# mean-value-property ratios


def random_solenoidal_field(d, L, n, kmax, rng, rms=1.0):
    """Smooth random periodic divergence-free velocity field with modes <= kmax."""
    grid = Grid(d, L, n)
    white = rng.standard_normal((d,) + grid.shape)
    hat = grid.fft(white)
    kint = np.meshgrid(
        *[np.fft.fftfreq(n, 1.0 / n) if ax < d - 1 else np.arange(n // 2 + 1)
          for ax in range(d)],
        indexing="ij",
    )
    keep = np.ones(grid.hat_shape, dtype=bool)
    for comp in kint:
        keep &= np.abs(comp) <= kmax
    hat *= keep
    hat = grid.leray(hat)
    v = grid.ifft(hat)
    scale = np.sqrt(np.mean(v**2))
    if scale > 0:
        v *= rms / scale
    return v


def mvp_ratio(config, R, samples, sc, inner_radius=1.0):
    """Interior-to-ball energy ratios for clamped boundary data.

    For each divergence-free sample, the velocity is clamped to the sample
    outside the centered ball B_R (penalty kappa from sc) with the rigid
    particles active inside; returns the list of ratios
    mean_{B_inner} |grad u|^2 / mean_{B_R} |grad u|^2 (None where the
    denominator is degenerate) and the max over valid samples.
    """
    grid = Grid(config.d, config.L, sc.n, scheme=sc.scheme)
    if sc.kappa <= 0:
        raise ValidationError("mvp_ratio needs a positive clamp strength")
    if R > config.L / 2.0:
        raise ValidationError("clamp ball must fit in the box (R <= L/2)")
    center = np.full(config.d, config.L / 2.0)
    if config.n_particles:
        dist_c = np.sqrt(
            np.sum(wrap_delta(config.centers - center, config.L) ** 2, axis=-1)
        )
        if np.any(dist_c + 1.0 > R - config.gap):
            raise ValidationError("particles must lie inside B_(R-gap)")
    ax = grid.axes()
    deltas = [wrap_delta(ax - center[k], config.L) for k in range(config.d)]
    mesh = np.meshgrid(*deltas, indexing="ij")
    dist = np.sqrt(sum(g**2 for g in mesh))
    mask = (dist >= R).astype(float)
    ball_inner = dist <= inner_radius
    ball_R = dist <= R

    ratios = []
    for v in samples:
        # zero-energy boundary data (rigid translations) make the ratio 0/0
        v = np.asarray(v, dtype=float)
        v_hat = grid.fft(v)
        data_g2 = math.fsum(
            float(np.mean(grid.ifft(1j * grid.q[j] * v_hat[i]) ** 2))
            for i in range(config.d) for j in range(config.d)
        )
        data_scale = float(np.mean(v**2)) * (2.0 * np.pi / config.L) ** 2
        if data_g2 <= 1e-12 * max(data_scale, 1e-300):
            ratios.append(None)
            continue
        fld = solve_clamped(config, mask, v, np.zeros((config.d, config.d)), sc)
        g2 = np.zeros(grid.shape)
        for i in range(config.d):
            for j in range(config.d):
                g2 += grid.ifft(1j * grid.q[j] * fld.psi_hat[i]) ** 2
        denom = float(np.mean(g2[ball_R]))
        numer = float(np.mean(g2[ball_inner]))
        if denom <= 1e-12 * data_g2:
            ratios.append(None)
        else:
            ratios.append(numer / denom)
    valid = [r for r in ratios if r is not None]
    return ratios, (max(valid) if valid else None)
