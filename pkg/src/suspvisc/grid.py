"""Periodic voxel grids and Fourier-space operators for the spectral solvers.

Velocity fields are stored as real arrays of shape (d, n, ..., n) and symmetric
tensor fields in a compact layout of shape (ncomp, n, ..., n) where ncomp is
d*(d+1)/2.  The compact component order is all diagonal entries first, then the
off-diagonal pairs in lexicographic order; Frobenius contractions weight the
off-diagonal components by 2.
"""

import numpy as np
from scipy import fft as sfft

from .errors import ValidationError


def sym_pairs(d):
    """Index pairs (i, j), i <= j, for the compact symmetric-tensor layout."""
    pairs = [(i, i) for i in range(d)]
    pairs += [(i, j) for i in range(d) for j in range(i + 1, d)]
    return pairs


def sym_mult(d):
    """Frobenius multiplicity (1 for diagonal, 2 for off-diagonal components)."""
    return np.array([1.0 if i == j else 2.0 for i, j in sym_pairs(d)])


def tensor_to_compact(t, d):
    """Compact components of a symmetric d x d matrix (leading axes allowed)."""
    t = np.asarray(t, dtype=float)
    return np.stack([t[..., i, j] for i, j in sym_pairs(d)], axis=0)


def compact_to_tensor(c, d):
    """Inverse of tensor_to_compact; returns shape (d, d) + field shape."""
    out = np.zeros((d, d) + c.shape[1:], dtype=c.dtype)
    for comp, (i, j) in zip(c, sym_pairs(d)):
        out[i, j] = comp
        if i != j:
            out[j, i] = comp
    return out


class Grid:
    """Uniform periodic voxel grid on [0, L)^d with n voxels per side.

    Voxel centers sit at (j + 1/2) h with h = L/n, which keeps the sampled
    geometry symmetric under the reflections that map the box to itself.
    """

    def __init__(self, d, L, n, scheme="spectral"):
        if d not in (2, 3):
            raise ValidationError(f"dimension must be 2 or 3, got {d}")
        if n < 4 or n != int(n):
            raise ValidationError(f"grid resolution must be an integer >= 4, got {n}")
        if L <= 0:
            raise ValidationError(f"box side must be positive, got {L}")
        if scheme not in ("spectral", "fd"):
            raise ValidationError(f"unknown derivative scheme {scheme!r}")
        self.d = d
        self.L = float(L)
        self.n = int(n)
        self.scheme = scheme
        self.h = self.L / self.n
        self.shape = (self.n,) * d
        self.size = self.n**d
        self.hat_shape = (self.n,) * (d - 1) + (self.n // 2 + 1,)

        # angular frequencies q per axis, broadcastable over hat arrays; the
        # Nyquist derivative is zeroed (even n) so that iq maps real fields to
        # real fields and all operator identities hold exactly on the grid
        full = 2.0 * np.pi * sfft.fftfreq(self.n, d=self.h)
        real = 2.0 * np.pi * sfft.rfftfreq(self.n, d=self.h)
        full_t, real_t = full.copy(), real.copy()
        if self.n % 2 == 0:
            full[self.n // 2] = 0.0
            real[-1] = 0.0

        def per_axis(vec_last, vec_other):
            out = []
            for ax in range(d):
                vec = vec_last if ax == d - 1 else vec_other
                sl = [None] * d
                sl[ax] = slice(None)
                out.append(vec[tuple(sl)])
            return out

        axis_q = per_axis(real, full)
        if scheme == "fd":
            # edge-averaged finite differences (modified frequencies): the
            # real multiplier of the corner-shifted difference stencil, which
            # tempers the Gibbs response of discontinuous coefficients.  The
            # sine uses the Nyquist-zeroed frequency (odd multipliers must
            # vanish there); the transverse edge average uses the true one,
            # where it vanishes by itself.
            full_c = np.cos(0.5 * self.h * full_t)
            real_c = np.cos(0.5 * self.h * real_t)
            if self.n % 2 == 0:
                # cos(pi/2) = 0 analytically; snap it so that null modes of
                # the stencil are exactly null (floating-point cos leaves
                # ~1e-17 residue that would poison preconditioned solves)
                full_c[self.n // 2] = 0.0
                real_c[-1] = 0.0
            sins = [np.sin(0.5 * self.h * qk) for qk in axis_q]
            coss = per_axis(real_c, full_c)
            self.q = []
            for ax in range(d):
                g = (2.0 / self.h) * sins[ax]
                for other in range(d):
                    if other != ax:
                        g = g * coss[other]
                self.q.append(g)
        else:
            self.q = axis_q
        self.q2 = sum(qi**2 for qi in self.q)
        self._q2_safe = np.where(self.q2 == 0.0, 1.0, self.q2)

        # Parseval weights for the half-spectrum layout of rfftn
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        if self.n % 2 == 0:
            w[-1] = 1.0
        self.parseval_w = w.reshape((1,) * (d - 1) + (-1,))

    def axes(self):
        """Voxel center coordinates along one axis."""
        return (np.arange(self.n) + 0.5) * self.h

    def fft(self, field):
        """rfftn over the trailing d axes."""
        return sfft.rfftn(field, axes=tuple(range(-self.d, 0)))

    def ifft(self, hat):
        """irfftn over the trailing d axes, restoring the real grid shape."""
        return sfft.irfftn(hat, s=self.shape, axes=tuple(range(-self.d, 0)))

    def hat_dot(self, a, b):
        """Voxel mean of sum_c a_c(x) b_c(x) computed from half-spectrum arrays.

        Matches np.mean(np.sum(a_real * b_real, axis=0)) for real fields; the
        conjugate-pair weights make the identity exact, which is tested.
        """
        s = np.sum(self.parseval_w * (a.real * b.real + a.imag * b.imag))
        return s / self.size**2

    def hat_norm2(self, a):
        return self.hat_dot(a, a)

    def strain_hat(self, u_hat):
        """Symmetric gradient in Fourier space, compact layout.

        (D u)^ij = (i/2)(q_j u^_i + q_i u^_j); the zero mode vanishes, so D u
        has exactly zero voxel mean.
        """
        comps = []
        for i, j in sym_pairs(self.d):
            comps.append(0.5j * (self.q[j] * u_hat[i] + self.q[i] * u_hat[j]))
        return np.stack(comps, axis=0)

    def stress_div_hat(self, s_hat):
        """Divergence of a compact symmetric tensor field: (div s)^_i = i q_j s^_ij."""
        out = np.zeros((self.d,) + self.hat_shape, dtype=complex)
        for comp, (i, j) in zip(s_hat, sym_pairs(self.d)):
            out[i] += 1j * self.q[j] * comp
            if i != j:
                out[j] += 1j * self.q[i] * comp
        return out

    def leray(self, v_hat, keep_mean=False):
        """Project a velocity hat-field onto divergence-free fields, mode by mode.

        The zero mode (constant translations) is divergence-free; it is zeroed
        unless keep_mean is set.
        """
        qv = sum(self.q[i] * v_hat[i] for i in range(self.d))
        out = v_hat - np.stack([self.q[i] * qv for i in range(self.d)]) / self._q2_safe
        if not keep_mean:
            out[(slice(None),) + (0,) * self.d] = 0.0
        return out

    def divergence_hat(self, v_hat):
        return sum(1j * self.q[i] * v_hat[i] for i in range(self.d))


def wrap_delta(delta, L):
    """Map displacements to the nearest periodic image."""
    return delta - L * np.round(delta / L)


def sphere_indicator(d, L, n, centers, smooth=True, subsamples=5, grid_offset=0.5):
    """Volume-fraction indicator of a union of unit spheres on the voxel grid.

    Interior and exterior voxels are classified by their center; voxels whose
    center lies within half a voxel diagonal of a sphere surface get the
    covered fraction from a subsamples^d stratified subgrid.  With smooth=False
    the indicator is the plain 0/1 voxel-center membership.  Hardcore
    configurations have disjoint interiors, so per-sphere fractions add; the
    sum is clipped at 1 to absorb tangency roundoff.

    grid_offset places the sampling point within each voxel: 0.5 is the voxel
    center, 0.0 the corner shared by the difference stencil of the fd scheme.
    """
    grid = Grid(d, L, n)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    frac = np.zeros(grid.shape)
    if centers.size == 0:
        return frac
    h = grid.h
    band = 0.5 * h * np.sqrt(d)
    # one window of voxel indices around each sphere
    m = int(np.ceil((1.0 + band) / h)) + 1
    offs = np.arange(-m, m + 1)
    if smooth:
        sub = (np.arange(subsamples) + 0.5) / subsamples - 0.5
        sub_offsets = np.stack(np.meshgrid(*([sub * h] * d), indexing="ij"), axis=-1)
        sub_offsets = sub_offsets.reshape(-1, d)
    for c in centers:
        base = np.floor(c / h - grid_offset).astype(int)
        idx = [(base[k] + offs) % n for k in range(d)]
        coords = [((base[k] + offs) + grid_offset) * h for k in range(d)]
        delta = [wrap_delta(coords[k] - c[k], L) for k in range(d)]
        mesh = np.meshgrid(*delta, indexing="ij")
        dist = np.sqrt(sum(g**2 for g in mesh))
        local = (dist <= 1.0).astype(float)
        if smooth:
            edge = np.abs(dist - 1.0) <= band
            if np.any(edge):
                pts = np.stack([g[edge] for g in mesh], axis=-1)
                subpts = pts[:, None, :] + sub_offsets[None, :, :]
                inside = np.sum(subpts**2, axis=-1) <= 1.0
                local[edge] = inside.mean(axis=1)
        frac[np.ix_(*idx)] += local
    np.clip(frac, 0.0, 1.0, out=frac)
    return frac
