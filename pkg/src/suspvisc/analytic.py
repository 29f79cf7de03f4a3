"""Closed-form Stokes flows around a single sphere in a linear straining flow.

Disturbance fields are built from the power-law ansatz

    u(x) = alpha r^n (E x) + beta r^(n-2) (x . E x) x,
    p(x) = gamma r^(n-2) (x . E x),

with E trace-free symmetric.  Substituting into the Stokes system (unit
viscosity, stress 2 D(u) - p Id) gives, per exponent n,

    divergence:  alpha n + beta (n + d) = 0
    momentum, coefficient of r^(n-2) Ex:   alpha n (n + d) + 4 beta - 2 gamma = 0
    momentum, coefficient of r^(n-4) Sx:   (n - 2) (beta (n + d + 2) - gamma) = 0

which admits exactly four branches with exponents {0, 2, -d, -(d+2)}: the
uniform strain, a growing branch, and two decaying ones.  Boundary conditions
at r = 1 (rigid sphere: disturbance equals -Ex) and either decay, clamping, or
zero disturbance traction at an outer radius select the coefficients.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .ensembles import unit_ball_volume
from .errors import ValidationError


def _branch_table(d):
    """Rows (n, alpha, beta, gamma) spanning the strain-driven solutions."""
    return [
        (0.0, 1.0, 0.0, 0.0),
        (2.0, -(d + 2) / 2.0, 1.0, 2.0 - (d + 2) ** 2 / 2.0),
        (float(-d), 0.0, 1.0, 2.0),
        (float(-(d + 2)), 1.0, -(d + 2) / 2.0, 0.0),
    ]


def _check_strain(d, E):
    E = np.asarray(E, dtype=float)
    if E.shape != (d, d):
        raise ValidationError(f"strain must be {d}x{d}, got {E.shape}")
    if not np.allclose(E, E.T, atol=1e-13):
        raise ValidationError("strain must be symmetric")
    if abs(np.trace(E)) > 1e-12 * max(1.0, np.abs(E).max()):
        raise ValidationError("strain must be trace-free")
    return E


@dataclass
class RadialAnsatz:
    """A Stokes flow u = p(r) Ex + q(r) (x.Ex) x with power-law radial parts.

    p_terms / q_terms / pr_terms are (exponent, coefficient) pairs for the
    velocity building blocks and the pressure q-block.  Valid for r >= 1 and,
    for cell kinds, r <= R.
    """

    d: int
    E: np.ndarray
    kind: str                      # whole-space | clamped-cell | traction-free-cell
    R: float                       # outer radius; inf for whole-space
    branch_coeffs: np.ndarray      # weights of the four branches (decaying-only: 2)
    branches: list = field(default_factory=list)
    residual_momentum: float = 0.0
    residual_divergence: float = 0.0

    def __post_init__(self):
        if not self.branches:
            self.branches = _branch_table(self.d)
        res = self.stokes_residual()
        self.residual_momentum, self.residual_divergence = res
        if max(res) > 1e-10:
            raise ValidationError(f"ansatz violates the Stokes system: residuals {res}")

    # -- radial profile helpers ------------------------------------------------

    @property
    def p_terms(self):
        return [(n, c * a) for c, (n, a, b, g) in zip(self.branch_coeffs, self.branches)]

    @property
    def q_terms(self):
        return [(n - 2, c * b) for c, (n, a, b, g) in zip(self.branch_coeffs, self.branches)]

    @property
    def pr_terms(self):
        return [(n - 2, c * g) for c, (n, a, b, g) in zip(self.branch_coeffs, self.branches)]

    def _eval_terms(self, terms, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for n, c in terms:
            if c != 0.0:
                out = out + c * r**n
        return out

    # -- field evaluation ------------------------------------------------------

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x**2, axis=-1))
        Ex = x @ self.E
        S = np.sum(x * Ex, axis=-1)
        return x, r, Ex, S

    def velocity(self, x):
        """Disturbance velocity at points x (shape (..., d))."""
        x, r, Ex, S = self._split(x)
        p = self._eval_terms(self.p_terms, r)
        q = self._eval_terms(self.q_terms, r)
        return p[..., None] * Ex + (q * S)[..., None] * x

    def total_velocity(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.E + self.velocity(x)

    def pressure(self, x):
        x, r, Ex, S = self._split(x)
        return self._eval_terms(self.pr_terms, r) * S

    def grad(self, x):
        """Velocity gradient, grad[..., i, j] = d_j u_i."""
        x, r, Ex, S = self._split(x)
        out = np.zeros(x.shape[:-1] + (self.d, self.d))
        eye = np.eye(self.d)
        for c, (n, a, b, g) in zip(self.branch_coeffs, self.branches):
            if c == 0.0:
                continue
            rn2 = r ** (n - 2)
            term = (c * a * n * rn2)[..., None, None] * (Ex[..., :, None] * x[..., None, :])
            term += (c * a * r**n)[..., None, None] * self.E
            term += (c * b * (n - 2) * r ** (n - 4) * S)[..., None, None] * (
                x[..., :, None] * x[..., None, :]
            )
            term += (2 * c * b * rn2)[..., None, None] * (x[..., :, None] * Ex[..., None, :])
            term += (c * b * rn2 * S)[..., None, None] * eye
            out += term
        return out

    def strain(self, x):
        g = self.grad(x)
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    def stress(self, x):
        """Disturbance stress 2 D(u) - p Id."""
        s = 2.0 * self.strain(x)
        p = self.pressure(x)
        return s - p[..., None, None] * np.eye(self.d)

    def total_stress(self, x):
        """Stress of the full flow Ex + u (background pressure zero)."""
        return self.stress(x) + 2.0 * self.E

    def traction(self, x, total=False):
        """sigma(x) x/|x|, the traction on the sphere of radius |x|.

        Uses the per-branch closed forms t = Pt(r) Ex + Qt(r) Sx with
        Pt = (alpha (n+2) + 2 beta) r^(n-1), Qt = (alpha n + 2 beta n - gamma) r^(n-3).
        """
        x, r, Ex, S = self._split(x)
        Pt = np.zeros_like(r)
        Qt = np.zeros_like(r)
        for c, (n, a, b, g) in zip(self.branch_coeffs, self.branches):
            if c == 0.0:
                continue
            Pt = Pt + c * (a * (n + 2) + 2 * b) * r ** (n - 1)
            Qt = Qt + c * (a * n + 2 * b * n - g) * r ** (n - 3)
        t = Pt[..., None] * Ex + (Qt * S)[..., None] * x
        if total:
            t = t + 2.0 * (Ex / np.where(r == 0, 1.0, r)[..., None])
        return t

    # -- verification ----------------------------------------------------------

    def stokes_residual(self, radii=None, rng=None):
        """Relative momentum and divergence residuals of the branch algebra.

        The residual rules are the generic power-law identities; a wrong
        coefficient in any branch shows up here.  Scaled by the largest
        coefficient magnitude.
        """
        scale = max(np.abs(self.branch_coeffs).max(), 1e-300)
        mom = 0.0
        div = 0.0
        d = self.d
        for c, (n, a, b, g) in zip(self.branch_coeffs, self.branches):
            div = max(div, abs(c * (a * n + b * (n + d))))
            mom = max(mom, abs(c * (a * n * (n + d) + 4 * b - 2 * g)))
            mom = max(mom, abs(c * (n - 2) * (b * (n + d + 2) - g)))
        return mom / scale, div / scale

    # -- energies --------------------------------------------------------------

    def surface_energy(self, r, nodes=None):
        """Integral of |D(u)|^2 over the sphere of radius r (exact quadrature).

        The integrand is a polynomial of degree <= 8 in the unit direction, so
        the default product rule integrates it exactly.
        """
        pts, w = sphere_quadrature(self.d, 8 if self.d == 3 else 16) if nodes is None else nodes
        r = np.atleast_1d(np.asarray(r, dtype=float))
        x = r[:, None, None] * pts[None, :, :]
        dens = np.sum(self.strain(x) ** 2, axis=(-1, -2))
        return np.squeeze((dens @ w) * r ** (self.d - 1))

    def energy(self):
        """Dissipation integral |B1| |E|^2 + int_1^R |D(u)|^2 over the shell.

        Inside the sphere the total strain is -E + E = 0 and the corrector
        strain is -E, contributing |B1| |E|^2; outside, adaptive radial
        quadrature of the angular integral.
        """
        nodes = sphere_quadrature(self.d, 8 if self.d == 3 else 16)

        def f(r):
            return self.surface_energy(r, nodes=nodes)

        R = self.R
        if np.isinf(R):
            val, err = integrate.quad(f, 1.0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
        else:
            val, err = integrate.quad(f, 1.0, R, epsabs=1e-12, epsrel=1e-12, limit=200)
        E2 = float(np.sum(self.E**2))
        return unit_ball_volume(self.d) * E2 + val


def sphere_quadrature(d, order):
    """Quadrature nodes and weights on the unit sphere.

    d=3: product Gauss-Legendre in the polar cosine (order nodes) x uniform
    azimuth (2*order nodes); exact for spherical polynomials of degree
    <= min(2*order-1, 2*order-1).  d=2: uniform circle rule with `order`
    nodes, exact for trigonometric degree <= order-1.
    """
    if d == 2:
        ang = 2.0 * np.pi * np.arange(order) / order
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        w = np.full(order, 2.0 * np.pi / order)
        return pts, w
    t, wt = np.polynomial.legendre.leggauss(order)
    m = 2 * order
    ang = 2.0 * np.pi * np.arange(m) / m
    st = np.sqrt(1.0 - t**2)
    pts = np.stack(
        [
            np.outer(st, np.cos(ang)).ravel(),
            np.outer(st, np.sin(ang)).ravel(),
            np.outer(t, np.ones(m)).ravel(),
        ],
        axis=-1,
    )
    w = np.outer(wt, np.full(m, 2.0 * np.pi / m)).ravel()
    return pts, w


def single_sphere_solution(d, E):
    """Whole-space disturbance of a rigid unit sphere in the straining flow Ex.

    The two decaying branches are matched to the rigid boundary condition
    u = -Ex at r = 1; net force and torque vanish by parity.
    """
    E = _check_strain(d, E)
    table = _branch_table(d)
    decaying = [2, 3]  # exponents -d and -(d+2)
    A = np.zeros((2, 2))
    for col, bi in enumerate(decaying):
        n, a, b, g = table[bi]
        A[0, col] = a  # p(1)
        A[1, col] = b  # q(1)
    try:
        sol = np.linalg.solve(A, np.array([-1.0, 0.0]))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - fixed exponents
        raise AssertionError("decaying-branch system is singular") from exc
    coeffs = np.zeros(4)
    coeffs[decaying[0]], coeffs[decaying[1]] = sol
    return RadialAnsatz(d=d, E=E, kind="whole-space", R=np.inf, branch_coeffs=coeffs)


def cell_model(R, kind, E, d=3):
    """Concentric-sphere cell flow: rigid unit sphere, outer condition at R.

    kind "clamped": the disturbance vanishes at r = R, so the total velocity
    matches the background strain there (upper-bound competitor).  kind
    "traction-free": the disturbance traction vanishes at r = R (lower-bound
    relaxation).  Only d=3 is supported; the 2D bounds go through the spectral
    solver instead.
    """
    if d != 3:
        raise ValidationError("cell models are implemented for d=3 only")
    if kind not in ("clamped", "traction-free"):
        raise ValidationError(f"unknown cell kind {kind!r}")
    if not R > 1.0:
        raise ValidationError(f"cell radius must exceed the particle radius, got {R}")
    E = _check_strain(d, E)
    table = _branch_table(d)
    A = np.zeros((4, 4))
    rhs = np.array([-1.0, 0.0, 0.0, 0.0])
    for col, (n, a, b, g) in enumerate(table):
        A[0, col] = a  # p(1) = -1
        A[1, col] = b  # q(1) = 0
        if kind == "clamped":
            A[2, col] = a * R**n           # p(R) = 0
            A[3, col] = b * R ** (n - 2)   # q(R) = 0
        else:
            A[2, col] = (a * (n + 2) + 2 * b) * R ** (n - 1)       # Pt(R) = 0
            A[3, col] = (a * n + 2 * b * n - g) * R ** (n - 3)     # Qt(R) = 0
    # two-sided equilibration keeps the system well-scaled for extreme R
    row_scale = np.abs(A).max(axis=1)
    row_scale[row_scale == 0] = 1.0
    As = A / row_scale[:, None]
    col_scale = np.abs(As).max(axis=0)
    col_scale[col_scale == 0] = 1.0
    As = As / col_scale
    cond = np.linalg.cond(As)
    if cond > 1e12:
        warnings.warn(f"cell system ill-conditioned (cond ~ {cond:.2e}) at R={R}")
    coeffs = np.linalg.solve(As, rhs / row_scale) / col_scale
    return RadialAnsatz(
        d=d, E=E, kind=f"{kind}-cell", R=float(R), branch_coeffs=coeffs
    )


def whole_space_energy(d, E=None):
    """Dissipation of the single-sphere corrector over all of space.

    Equals (d+2)/2 |B1| |E|^2; returned from the quadrature of the ansatz, not
    the closed form, so it can serve as an independent oracle.
    """
    if E is None:
        E = np.zeros((d, d))
        E[0, 1] = E[1, 0] = 1.0 / np.sqrt(2.0)
    return single_sphere_solution(d, E).energy()


# ---------------------------------------------------------------------------
# far-field pair kernel


def bg_far_kernel(y, E, tol=1e-8, return_nodes=False):
    """Surface pairing K(y) = int_{|x|=1} psi(x - y) . (sigma0(x) x) dS.

    psi is the single-sphere disturbance centered at y and sigma0 the total
    stress of the single-sphere flow at the origin; both come from
    single_sphere_solution.  The quadrature order doubles until the value is
    stable to tol (relative, with an absolute floor at machine scale).
    """
    y = np.asarray(y, dtype=float)
    d = len(y)
    r = float(np.sqrt(np.sum(y**2)))
    if r <= 2.0:
        raise ValidationError(f"offset must exceed one diameter, got |y| = {r}")
    ans = single_sphere_solution(d, E)

    def value(order):
        pts, w = sphere_quadrature(d, order)
        t = ans.traction(pts, total=True)
        psi = ans.velocity(pts - y)
        return float(np.sum(psi * t, axis=-1) @ w)

    order = 8
    prev = value(order)
    for _ in range(8):
        order *= 2
        cur = value(order)
        if abs(cur - prev) <= tol * max(abs(cur), 1e-12):
            if return_nodes:
                return cur, order
            return cur
        prev = cur
    raise ValidationError(f"far-kernel quadrature did not stabilize at |y|={r}")


def far_kernel_profile(rs, E, n_dirs=None):
    """Direction-averaged far kernel K_bar(r) over a spread of unit offsets."""
    rs = np.atleast_1d(np.asarray(rs, dtype=float))
    d = np.asarray(E).shape[0]
    if n_dirs is None:
        n_dirs = 8 if d == 2 else 4
    if d == 2:
        ang = np.pi * (np.arange(n_dirs) + 0.5) / n_dirs  # parity halves the circle
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        w = np.full(n_dirs, 1.0 / n_dirs)
    else:
        pts, wq = sphere_quadrature(3, n_dirs)
        dirs = pts
        w = wq / wq.sum()
    out = np.empty(len(rs))
    for k, r in enumerate(rs):
        vals = np.array([bg_far_kernel(r * u, E) for u in dirs])
        out[k] = float(vals @ w)
    return np.squeeze(out) if out.size > 1 else float(out[0])
