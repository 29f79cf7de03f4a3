"""Dilute-regime analysis: Einstein slope, cluster terms, pair renormalization.

Everything here sits on top of the corrector solver and the analytic
single-sphere machinery: affine fits of campaign tensors in the volume
fraction, exact finite-N cluster telescoping, the renormalized first-order
term, the two-body near/far kernels, and finite-volume convergence tables.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .analytic import far_kernel_profile, single_sphere_solution, sphere_quadrature
from .ensembles import ParticleConfig, generate, unit_ball_volume
from .errors import QuadratureError, RenormalizationError, ValidationError
from .spectral import SolverConfig, cross_dissipation, solve_corrector
from .grid import wrap_delta
from .viscosity import assemble_tensor, strain_basis


# ---------------------------------------------------------------------------
# Einstein slope extraction


@dataclass
class DiluteFit:
    """Affine-in-phi fit of campaign tensors with per-entry error control."""

    phis: np.ndarray
    slope: np.ndarray            # (m, m)
    slope_err: np.ndarray
    intercept: np.ndarray
    intercept_err: np.ndarray
    iso_slope: float
    iso_slope_err: float
    curvature: bool              # quadratic term significant at 3 sigma
    curvature_stat: float
    residuals: np.ndarray        # (n_points, m, m)
    leverage: np.ndarray         # (n_points, m, m)
    intercept_ok: bool           # intercept within 3 sigma of identity
    meta: dict = field(default_factory=dict)


def _wls(x, y, sigma, order=1):
    """Weighted least squares of y on powers of x; returns (beta, cov, hat_diag)."""
    X = np.vander(x, order + 1, increasing=True)
    w = 1.0 / sigma**2
    XtW = X.T * w
    cov = np.linalg.inv(XtW @ X)
    beta = cov @ (XtW @ y)
    hat = np.einsum("ki,ij,kj->k", X, cov, XtW.T)
    return beta, cov, hat


def einstein_fit(points):
    """Weighted affine fit of (phi, ViscosityTensor) data per tensor entry.

    Entries are fit independently with weights from their standard errors
    (uniform when exact); the isotropic slope is the mean diagonal slope.  A
    quadratic refit flags curvature when its coefficient is 3 sigma
    significant on any diagonal entry.
    """
    if len(points) < 3:
        raise ValidationError("need at least 3 (phi, tensor) points")
    phis = np.array([float(p) for p, _ in points])
    if len(np.unique(phis)) < 3:
        raise ValidationError("need at least 3 distinct phi values")
    tensors = [t for _, t in points]
    m = tensors[0].m
    keys = ("d", "L", "n", "theta", "process")
    ref = {k: tensors[0].meta.get(k) for k in keys}
    for t in tensors[1:]:
        if t.m != m or any(t.meta.get(k) != ref[k] for k in keys):
            raise ValidationError("tensors come from inconsistent campaigns")

    n_pts = len(points)
    slope = np.empty((m, m))
    slope_err = np.empty((m, m))
    intercept = np.empty((m, m))
    intercept_err = np.empty((m, m))
    residuals = np.empty((n_pts, m, m))
    leverage = np.empty((n_pts, m, m))
    curvature_stat = 0.0
    for i in range(m):
        for j in range(m):
            y = np.array([t.B[i, j] for t in tensors])
            sig = np.array([t.stderr[i, j] for t in tensors])
            pos = sig[sig > 0]
            floor = 0.05 * np.median(pos) if pos.size else 1.0
            sig = np.maximum(sig, floor)
            beta, cov, hat = _wls(phis, y, sig, order=1)
            intercept[i, j], slope[i, j] = beta
            intercept_err[i, j] = math.sqrt(max(cov[0, 0], 0.0))
            slope_err[i, j] = math.sqrt(max(cov[1, 1], 0.0))
            residuals[:, i, j] = y - (beta[0] + beta[1] * phis)
            leverage[:, i, j] = hat
            if i == j:
                beta2, cov2, _ = _wls(phis, y, sig, order=2)
                sc2 = math.sqrt(max(cov2[2, 2], 1e-300))
                curvature_stat = max(curvature_stat, abs(beta2[2]) / sc2)

    iso_slope = float(np.trace(slope) / m)
    iso_slope_err = float(np.sqrt(np.trace(slope_err**2)) / m)
    dev = np.abs(intercept - np.eye(m))
    intercept_ok = bool(np.all(dev <= 3.0 * intercept_err + 1e-8))
    return DiluteFit(
        phis=phis,
        slope=slope,
        slope_err=slope_err,
        intercept=intercept,
        intercept_err=intercept_err,
        iso_slope=iso_slope,
        iso_slope_err=iso_slope_err,
        curvature=bool(curvature_stat > 3.0),
        curvature_stat=float(curvature_stat),
        residuals=residuals,
        leverage=leverage,
        intercept_ok=intercept_ok,
        meta=dict(ref, n_points=n_pts),
    )


# ---------------------------------------------------------------------------
# renormalized first-order term


def renormalized_B1(lam, d, numeric=False, sc=None, L=16.0):
    """First-order term: intensity times the single-sphere energy form.

    Returns the (m, m) tensor lam * Q in the trace-free strain basis, where
    Q(E) is the whole-space disturbance energy of one sphere; analytically
    this is phi (d+2)/2 Id.  With numeric=True the energy form is measured by
    a single-particle corrector solve in a periodic box of side L instead.
    """
    if lam < 0:
        raise ValidationError("intensity must be nonnegative")
    basis = strain_basis(d)
    m = len(basis)
    Q = np.empty((m, m))
    if not numeric:
        for i in range(m):
            Q[i, i] = single_sphere_solution(d, basis[i]).energy()
            for j in range(i + 1, m):
                ep = single_sphere_solution(d, basis[i] + basis[j]).energy()
                em = single_sphere_solution(d, basis[i] - basis[j]).energy()
                Q[i, j] = Q[j, i] = 0.25 * (ep - em)
        return lam * Q
    if sc is None:
        sc = SolverConfig(n=96, theta=1e4, tol=1e-7, max_iter=8000)
    center = np.full(d, L / 2.0)
    config = ParticleConfig(
        d=d, L=L, centers=center[None, :], gap=0.0, seed=0,
        process="manual", target_phi=None,
    )
    fields = [solve_corrector(config, E, sc) for E in basis]
    vol = L**d
    for i in range(m):
        for j in range(i, m):
            cross = cross_dissipation(fields[i], fields[j], config, sc.theta)
            gram = float(np.sum(basis[i] * basis[j]))
            Q[i, j] = Q[j, i] = (cross - gram) * vol
    return lam * Q


# ---------------------------------------------------------------------------
# exact finite-N cluster expansion


@dataclass
class ClusterReport:
    """All-subset dissipation energies and their inclusion-exclusion deltas."""

    n_particles: int
    energies: dict               # bitmask -> dissipation of that subset
    deltas: dict                 # bitmask -> delta^S
    order_sums: np.ndarray       # index k: sum of deltas over |S| = k
    telescoping_residual: float  # relative defect of e(P) = sum of deltas
    meta: dict = field(default_factory=dict)

    def subset_indices(self, mask):
        return tuple(i for i in range(self.n_particles) if mask >> i & 1)

    def to_dict(self):
        return {
            "n_particles": self.n_particles,
            "energies": {format(k, "b"): v for k, v in self.energies.items()},
            "deltas": {format(k, "b"): v for k, v in self.deltas.items()},
            "order_sums": self.order_sums.tolist(),
            "telescoping_residual": self.telescoping_residual,
            "meta": dict(self.meta),
        }


def cluster_terms(config, E, sc, allow_large=False):
    """Corrector energies for every particle subset plus their finite differences.

    Removing a particle removes its viscosity contrast entirely; all 2^N
    solves share the grid, strain, and penalization, so the inclusion-
    exclusion telescoping e(P) = sum_S delta^S is an algebraic identity whose
    floating-point residual is reported.
    """
    N = config.n_particles
    if N > 4 and not allow_large:
        raise ValidationError(
            f"{N} particles need 2^{N} solves; pass allow_large=True to force"
        )
    energies = {}
    for mask in range(1 << N):
        idx = [i for i in range(N) if mask >> i & 1]
        energies[mask] = solve_corrector(config.subset(idx), E, sc).dissipation
    deltas = {}
    for mask in range(1 << N):
        total = 0.0
        sub = mask
        terms = []
        while True:
            sign = -1.0 if (bin(mask).count("1") - bin(sub).count("1")) % 2 else 1.0
            terms.append(sign * energies[sub])
            if sub == 0:
                break
            sub = (sub - 1) & mask
        deltas[mask] = math.fsum(terms)
    order_sums = np.zeros(N + 1)
    for mask, val in deltas.items():
        order_sums[bin(mask).count("1")] += val
    full = (1 << N) - 1
    resid = abs(energies[full] - math.fsum(deltas.values()))
    rel = resid / max(abs(energies[full]), 1e-300)
    return ClusterReport(
        n_particles=N,
        energies=energies,
        deltas=deltas,
        order_sums=order_sums,
        telescoping_residual=float(rel),
        meta={
            "L": config.L, "d": config.d, "n": sc.n, "theta": sc.theta,
            "E": np.asarray(E).tolist(),
        },
    )


# ---------------------------------------------------------------------------
# two-body near kernel


@dataclass
class NearKernel:
    """Two-body-minus-one-body pairing at offset y, numeric and reflected."""

    y: np.ndarray
    value: float | None          # local spectral evaluation (None if skipped)
    reflection: float            # truncated-reflection approximation
    reflection_only: bool
    box: float | None = None
    n: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def best(self):
        return self.reflection if self.value is None else self.value


def _reflection_near(y, E):
    """Two-reflection estimate of the near kernel from analytic solutions."""
    y = np.asarray(y, dtype=float)
    d = len(y)
    base = single_sphere_solution(d, E)
    # strain incident on the origin sphere from the disturbance at y
    E_in = base.strain((-y)[None, :])[0]
    E_in = 0.5 * (E_in + E_in.T)
    E_in -= np.trace(E_in) / d * np.eye(d)
    reflected = single_sphere_solution(d, E_in)

    order = 16
    prev = None
    for _ in range(6):
        pts, wq = sphere_quadrature(d, order)
        sig = base.stress(pts - y) + reflected.stress(pts)
        v = base.velocity(pts - y)
        traction = np.einsum("kij,kj->ki", sig, pts)
        val = float(np.einsum("ki,ki,k->", v, traction, wq))
        if prev is not None and abs(val - prev) <= 1e-8 * max(abs(val), 1e-12):
            return val
        prev = val
        order *= 2
    return prev


def bg_near_kernel(y, E, sc, L_max=40.0, n_max=None):
    """Near interaction kernel: two-sphere minus one-sphere traction pairing.

    Solves the pair and single-particle correctors on a local periodic box of
    side max(8, 4|y|) and pairs the stress difference with the analytic
    disturbance of the far sphere through a smooth cutoff, integrating over
    the fluid exterior of the near sphere.  A two-reflection analytic
    approximation is always computed; when the box would exceed L_max the
    spectral evaluation is skipped and the reflection value is flagged as the
    only estimate.
    """
    y = np.asarray(y, dtype=float)
    d = len(y)
    E = np.asarray(E, dtype=float)
    ry = float(np.linalg.norm(y))
    if ry <= 2.0:
        raise ValidationError(f"offset must exceed the contact distance 2, got {ry}")
    refl = _reflection_near(y, E)
    Lb = max(8.0, 4.0 * ry)
    if Lb > L_max:
        return NearKernel(y=y, value=None, reflection=refl, reflection_only=True)
    if n_max is None:
        n_max = 512 if d == 2 else 128
    n_eff = int(round(sc.n * Lb / 8.0 / 2.0)) * 2
    n_eff = max(sc.n, min(n_eff, n_max))
    # the cutoff must fit between the near sphere and the far one; close to
    # contact there is no resolvable fluid shell (near-contact accuracy is a
    # non-goal) and the reflection estimate is all we report
    h_eff = Lb / n_eff
    if (ry - 1.0 - max(2.0 * h_eff, 0.15)) - (1.0 + max(2.0 * h_eff, 0.2)) < max(
        h_eff, 0.1
    ):
        return NearKernel(y=y, value=None, reflection=refl, reflection_only=True)

    center = np.full(d, Lb / 2.0)
    c0 = center - 0.5 * y
    c1 = center + 0.5 * y
    pair = ParticleConfig(d=d, L=Lb, centers=np.stack([c0, c1]), gap=0.0,
                          seed=0, process="manual", target_phi=None)
    single = pair.subset([0])
    sc_local = replace(sc, n=n_eff)
    f2 = solve_corrector(pair, E, sc_local)
    f1 = solve_corrector(single, E, sc_local)

    grid = f2.grid()
    h = grid.h
    from .spectral import _weight_field, _smoothstep
    _, _, w2 = _weight_field(pair, sc_local)
    _, _, w1 = _weight_field(single, sc_local)

    # full stress difference 2 w (D psi + E) - p Id per solve; backgrounds cancel
    def stress(fld, wf):
        t = fld.Dpsi + _compact_const(E, d, grid.shape)
        s = 2.0 * wf * t
        p = grid.ifft(fld.pressure_hat)
        return s, p

    s2, p2 = stress(f2, w2)
    s1, p1 = stress(f1, w1)
    ds = s2 - s1
    dp = p2 - p1

    ax = grid.axes()
    deltas0 = [wrap_delta(ax - c0[k], Lb) for k in range(d)]
    mesh0 = np.meshgrid(*deltas0, indexing="ij")
    r0 = np.sqrt(sum(g**2 for g in mesh0))
    deltas1 = [wrap_delta(ax - c1[k], Lb) for k in range(d)]
    mesh1 = np.meshgrid(*deltas1, indexing="ij")

    # cutoff: 1 near the origin sphere, 0 before reaching the far sphere
    r2 = ry - 1.0 - max(2.0 * h, 0.15)
    r1 = min(1.0 + max(2.0 * h, 0.2), 0.5 * (1.0 + r2))
    eta = _smoothstep((r2 - r0) / (r2 - r1))
    eta_p = _smoothstep_deriv((r2 - r0) / (r2 - r1)) * (-1.0 / (r2 - r1))

    ext = r0 > 1.0
    xs = np.stack([g[ext] for g in mesh1], axis=-1)   # positions relative to c1
    base = single_sphere_solution(d, E)
    psi = base.velocity(xs)
    dpsi = base.grad(xs)
    rr = np.where(r0[ext] > 0, r0[ext], 1.0)
    nhat = np.stack([g[ext] / rr for g in mesh0], axis=-1)
    grad_v = eta[ext, None, None] * dpsi + np.einsum(
        "ki,kj->kij", psi, eta_p[ext, None] * nhat
    )
    sym = 0.5 * (grad_v + np.swapaxes(grad_v, -1, -2))
    ds_full = _compact_to_full(ds, d)[ext]
    dp_e = dp[ext]
    integrand = np.einsum("kij,kij->k", ds_full, sym) - dp_e * np.einsum(
        "kii->k", sym
    )
    value = -float(integrand.sum()) * h**d
    return NearKernel(
        y=y, value=value, reflection=refl, reflection_only=False,
        box=Lb, n=n_eff,
        meta={"iterations": (f2.iterations, f1.iterations), "h": h},
    )


def _smoothstep_deriv(s):
    s = np.clip(s, 0.0, 1.0)
    return 6.0 * s * (1.0 - s)


def _compact_const(E, d, shape):
    from .grid import tensor_to_compact
    return tensor_to_compact(np.asarray(E, dtype=float), d).reshape(
        (-1,) + (1,) * len(shape)
    )


def _compact_to_full(field_c, d):
    """(ncomp, grid) compact symmetric field -> (grid..., d, d) full tensors."""
    from .grid import sym_pairs
    pairs = sym_pairs(d)
    shape = field_c.shape[1:]
    out = np.zeros(shape + (d, d))
    for comp, (i, j) in enumerate(pairs):
        out[..., i, j] = field_c[comp]
        if i != j:
            out[..., j, i] = field_c[comp]
    return out


# ---------------------------------------------------------------------------
# second-order (pair) term


@dataclass
class SecondOrderTerm:
    """Renormalized pair contribution: near f2 integral plus far h2 integral."""

    value: float
    near_term: float
    far_term: float
    near_err: float              # propagated from the f2 bin errors
    far_err: float               # propagated from the h2 bin errors
    tail_estimate: float         # extrapolated beyond the data, not added in
    tail_fraction: float
    r_contact: float
    r_near_max: float
    r_max: float
    table: dict = field(default_factory=dict)
    tensor: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def second_order_term(pc, E, sc, r_near_max=None, L_max=40.0, n_dirs=None,
                      n_near_nodes=6, basis_tensor=False, strict=True):
    """Radial quadrature of near x f2 plus far x h2 from a pair correlation.

    Gating: a statistically significant h2 tail without positive fitted decay
    violates the renormalization hypothesis and raises RenormalizationError.
    The quadrature runs over the data range (near-kernel nodes beyond the
    affordable local-box size use the reflection estimate); the extrapolated
    tail is reported separately and, with strict=True, must stay below 5% of
    the total.
    """
    if pc.empty:
        raise ValidationError("pair correlation is empty")
    d = pc.d
    E = np.asarray(E, dtype=float)
    if r_near_max is None:
        r_near_max = float(pc.edges[-1])
    if not pc.tail_zero:
        gam = pc.gamma_hat
        err = pc.gamma_err if pc.gamma_err is not None else 0.0
        if gam is None or gam - err <= 0.0:
            raise RenormalizationError(
                "renormalization hypothesis violated: h2 tail does not decay"
            )

    r = pc.centers_r
    f2 = pc.f2
    h2 = pc.h2
    surf = 2.0 * np.pi * r if d == 2 else 4.0 * np.pi * r**2
    dr = np.diff(pc.edges)
    occupied = f2 > 0
    if not np.any(occupied):
        raise ValidationError("pair correlation has no occupied bins")
    r_contact = float(r[occupied][0])
    r_max = float(pc.edges[-1])

    if n_dirs is None:
        n_dirs = 4 if d == 2 else 3

    def angular_dirs():
        if d == 2:
            ang = np.pi * (np.arange(n_dirs) + 0.5) / (2 * n_dirs)
            return [np.array([np.cos(a), np.sin(a)]) for a in ang]
        pts, wq = sphere_quadrature(3, 4)
        keep = np.argsort(-wq)[:n_dirs]
        return [pts[k] for k in keep]

    dirs = angular_dirs()

    def near_scalar(E_use):
        # kernel sampled at a few radii and angularly averaged, then
        # log-interpolated onto the occupied bins
        nodes = np.geomspace(max(r_contact, 2.05), r_near_max, n_near_nodes)
        vals = []
        for rr in nodes:
            samples = [bg_near_kernel(rr * u, E_use, sc, L_max=L_max).best
                       for u in dirs]
            vals.append(float(np.mean(samples)))
        vals = np.array(vals)
        sign = np.sign(vals[np.argmax(np.abs(vals))]) or 1.0
        safe = np.maximum(np.abs(vals), 1e-300)
        logint = np.interp(np.log(np.clip(r, nodes[0], nodes[-1])),
                           np.log(nodes), np.log(safe))
        nbar = sign * np.exp(logint)
        mask = occupied & (r <= r_near_max)
        term = float(np.sum((nbar * f2 * surf * dr)[mask]))
        err = float(np.sqrt(np.sum(((nbar * surf * dr)[mask] * pc.stderr[mask]) ** 2)))
        # decay-extrapolated remainder of the near integrand
        p = np.polyfit(np.log(nodes), np.log(safe), 1)[0]
        lam2 = pc.intensity**2
        tail = abs(nbar[mask][-1]) * lam2 * surf[mask][-1] * r_near_max / max(
            -(p + d), 1e-2
        ) if mask.any() else 0.0
        return term, err, tail, nodes, vals

    def far_scalar(E_use):
        mask = r > 2.0
        Kbar = np.zeros_like(r)
        Kbar[mask] = np.atleast_1d(far_kernel_profile(r[mask], E_use))
        term = float(np.sum((Kbar * h2 * surf * dr)[mask]))
        err = float(np.sqrt(np.sum(((Kbar * surf * dr)[mask] * pc.stderr[mask]) ** 2)))
        # far kernel decays like r^-d; h2 tail like r^-gamma (or noise bound)
        k_last = abs(Kbar[mask][-1]) if mask.any() else 0.0
        if pc.tail_zero:
            h_tail = 2.0 * float(pc.stderr[-1])
            gam = max(d + 1.0, 1.0)
        else:
            h_tail = abs(h2[-1])
            gam = pc.gamma_hat
        denom = max(gam + d - (d - 1) - 1, 1e-2)
        tail = k_last * h_tail * surf[-1] * r_max / denom
        return term, err, tail, Kbar

    near_term, near_err, near_tail, nodes, node_vals = near_scalar(E)
    far_term, far_err, far_tail, Kbar = far_scalar(E)
    value = near_term + far_term
    tail_estimate = near_tail + far_tail
    tail_fraction = tail_estimate / max(abs(value), 1e-300)
    if strict and tail_fraction > 0.05:
        raise QuadratureError(
            f"truncation tail {tail_fraction:.1%} of the total exceeds 5%"
        )

    tensor = None
    if basis_tensor:
        basis = strain_basis(d)
        tensor = np.empty(len(basis))
        for k, Eb in enumerate(basis):
            nt, _, _, _, _ = near_scalar(Eb)
            ft, _, _, _ = far_scalar(Eb)
            tensor[k] = nt + ft
    return SecondOrderTerm(
        value=value,
        near_term=near_term,
        far_term=far_term,
        near_err=near_err,
        far_err=far_err,
        tail_estimate=tail_estimate,
        tail_fraction=float(tail_fraction),
        r_contact=r_contact,
        r_near_max=float(r_near_max),
        r_max=r_max,
        table={
            "r": r.tolist(),
            "f2": f2.tolist(),
            "h2": h2.tolist(),
            "far_kernel": Kbar.tolist(),
            "near_nodes": nodes.tolist(),
            "near_values": node_vals.tolist(),
        },
        tensor=tensor,
        meta={"n_dirs": n_dirs, "intensity": pc.intensity,
              "gamma_hat": pc.gamma_hat, "tail_zero": pc.tail_zero},
    )


# ---------------------------------------------------------------------------
# finite-volume convergence


@dataclass
class FiniteVolumeTable:
    """Per-L campaign tensors, successive differences, and cluster sums."""

    Ls: list
    ns: list
    tensors: list                 # ViscosityTensor per L
    iso: np.ndarray
    iso_err: np.ndarray
    diffs: np.ndarray             # |iso(L_{k+1}) - iso(L_k)|
    diff_errs: np.ndarray
    first_sums: np.ndarray        # per-volume first-order cluster sums
    second_sums: np.ndarray       # subset-sampled second-order sums
    cluster_sizes: list
    rate: float | None
    meta: dict = field(default_factory=dict)

    def rows(self):
        out = []
        for k, L in enumerate(self.Ls):
            out.append({
                "L": L, "n": self.ns[k], "iso": self.iso[k],
                "iso_err": self.iso_err[k], "first_sum": self.first_sums[k],
                "second_sum": self.second_sums[k],
                "cluster_size": self.cluster_sizes[k],
            })
        return out


def _cluster_sums(config, E, sc, cap_first=16, cap_second=4, rng=None):
    """Per-volume first-order sum and a subset sample of the second order.

    First order: singles are estimated on a capped subset and scaled by
    N/k (single-particle energies are nearly exchangeable).  Second order:
    all pairs within the first cap_second particles, reusing their singles.
    """
    N = config.n_particles
    e_empty = solve_corrector(config.subset([]), E, sc).dissipation
    if N == 0:
        return 0.0, 0.0, 0
    k1 = min(N, cap_first)
    singles = {}
    for i in range(k1):
        singles[i] = solve_corrector(config.subset([i]), E, sc).dissipation
    first = math.fsum(singles[i] - e_empty for i in range(k1)) * (N / k1)
    k2 = min(N, cap_second)
    second = 0.0
    for i, j in combinations(range(k2), 2):
        e_pair = solve_corrector(config.subset([i, j]), E, sc).dissipation
        second += e_pair - singles[i] - singles[j] + e_empty
    return float(first), float(second), k2


def finite_volume_convergence(spec, Ls, sc, n_configs, cluster_caps=(16, 4)):
    """Campaign tensors across box sizes at fixed voxel size, with cluster sums.

    Requires n proportional to L (the voxel size of sc at Ls[0] is reused);
    reports per-L means, standard errors, successive differences of the
    isotropic viscosity, per-volume first-order cluster sums, and a fitted
    empirical convergence rate of the differences.
    """
    Ls = [float(L) for L in Ls]
    if len(Ls) < 3:
        raise ValidationError("need at least 3 box sizes")
    if any(b <= a for a, b in zip(Ls, Ls[1:])):
        raise ValidationError("box sizes must be strictly increasing")
    h = Ls[0] / sc.n
    ns = []
    for L in Ls:
        n_exact = L / h
        n_int = int(round(n_exact))
        if abs(n_exact - n_int) > 1e-9 or n_int % 2:
            raise ValidationError(
                f"box {L} is incompatible with fixed voxel size {h} (even n required)"
            )
        ns.append(n_int)

    E = strain_basis(spec.d)[0]
    tensors = []
    first_sums = []
    second_sums = []
    sizes = []
    for L, n in zip(Ls, ns):
        spec_L = replace(spec, L=L)
        sc_L = replace(sc, n=n)
        tensors.append(assemble_tensor(spec_L, sc_L, n_configs))
        cfg0 = generate(spec_L, index=0)
        fs, ss, k2 = _cluster_sums(cfg0, E, sc_L,
                                   cap_first=cluster_caps[0],
                                   cap_second=cluster_caps[1])
        first_sums.append(fs)
        second_sums.append(ss)
        sizes.append(k2)

    iso = np.array([t.iso_mean() for t in tensors])
    iso_err = np.array([
        float(np.sqrt(np.trace(t.stderr**2)) / t.m) for t in tensors
    ])
    diffs = np.abs(np.diff(iso))
    diff_errs = np.sqrt(iso_err[:-1] ** 2 + iso_err[1:] ** 2)
    rate = None
    if np.all(diffs > 0):
        rate = float(np.polyfit(np.log(Ls[:-1]), np.log(diffs), 1)[0])
    return FiniteVolumeTable(
        Ls=Ls, ns=ns, tensors=tensors, iso=iso, iso_err=iso_err,
        diffs=diffs, diff_errs=diff_errs,
        first_sums=np.array(first_sums), second_sums=np.array(second_sums),
        cluster_sizes=sizes, rate=rate,
        meta={"phi": spec.phi, "process": spec.process, "d": spec.d,
              "seed": spec.seed, "h": h, "n_configs": n_configs,
              "theta": sc.theta},
    )
