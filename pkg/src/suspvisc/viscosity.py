"""Effective viscosity tensor from corrector campaigns, plus cell-model bounds.

The tensor lives on the trace-free symmetric strain space in an orthonormal
basis, so the plain fluid is the identity and entries are voxel-averaged
dissipation forms between corrector solves.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytic import cell_model
from .ensembles import generate, geometry_diagnostics, unit_ball_volume
from .errors import CampaignError, ConvergenceError, OverlapError, ValidationError
from .spectral import cross_dissipation, solve_corrector


def strain_basis(d):
    """Orthonormal (Frobenius) basis of trace-free symmetric d x d matrices."""
    if d not in (2, 3):
        raise ValidationError(f"dimension must be 2 or 3, got {d}")
    basis = []
    # diagonal members first, then symmetrized off-diagonal pairs
    if d == 2:
        basis.append(np.diag([1.0, -1.0]) / np.sqrt(2.0))
    else:
        basis.append(np.diag([1.0, -1.0, 0.0]) / np.sqrt(2.0))
        basis.append(np.diag([1.0, 1.0, -2.0]) / np.sqrt(6.0))
    for i in range(d):
        for j in range(i + 1, d):
            m = np.zeros((d, d))
            m[i, j] = m[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(m)
    return basis


@dataclass
class ViscosityTensor:
    """Effective viscosity in the trace-free strain basis with sampling errors."""

    B: np.ndarray               # (m, m), symmetric
    stderr: np.ndarray          # (m, m) standard error of the mean
    n_samples: int
    meta: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)   # per-config (m, m) matrices

    @property
    def m(self):
        return self.B.shape[0]

    def symmetry_error(self):
        return float(np.abs(self.B - self.B.T).max())

    def eigmin(self):
        return float(np.linalg.eigvalsh(0.5 * (self.B + self.B.T)).min())

    def iso_mean(self):
        """Average of the diagonal: the isotropic viscosity on trace-free strains."""
        return float(np.trace(self.B) / self.m)

    def to_dict(self):
        return {
            "B": self.B.tolist(),
            "stderr": self.stderr.tolist(),
            "n_samples": self.n_samples,
            "meta": dict(self.meta),
        }


def _config_matrix(config, basis, sc):
    """One configuration's dissipation matrix: m solves, all entries bilinear."""
    fields = [solve_corrector(config, E, sc) for E in basis]
    m = len(basis)
    B = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            val = cross_dissipation(fields[i], fields[j], config, sc.theta)
            B[i, j] = B[j, i] = val
    return B


def assemble_tensor(spec, sc, n_configs, progress=None, jobs=1):
    """Average the per-configuration dissipation matrices of an ensemble.

    Draws n_configs configurations from spec (seeds split deterministically
    from spec.seed), solves one corrector per basis strain on each, and forms
    entries from the bilinear dissipation form.  Configurations whose solves
    fail to converge are skipped with a warning; more than 20% skipped raises
    CampaignError.  jobs > 1 runs configurations on a thread pool; results
    are reduced in configuration order either way.
    """
    if n_configs < 1:
        raise ValidationError("n_configs must be at least 1")
    basis = strain_basis(spec.d)
    m = len(basis)
    configs = [generate(spec, index=idx) for idx in range(n_configs)]

    def one(config):
        try:
            return _config_matrix(config, basis, sc), None
        except ConvergenceError as exc:
            return None, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, configs))
    else:
        results = map(one, configs)

    samples = []
    skipped = []
    for idx, (mat, err_msg) in enumerate(results):
        if mat is None:
            skipped.append((idx, err_msg))
            warnings.warn(f"config {idx} skipped: {err_msg}")
            continue
        samples.append(mat)
        if progress is not None:
            progress(idx, mat)
    if len(skipped) > 0.2 * n_configs:
        raise CampaignError(
            f"{len(skipped)}/{n_configs} configurations failed to converge"
        )
    if not samples:
        raise CampaignError("no configuration produced a tensor")
    n = len(samples)
    B = np.empty((m, m))
    err = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            vals = [s[i, j] for s in samples]
            mean = math.fsum(vals) / n
            B[i, j] = mean
            if n > 1:
                var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
                err[i, j] = math.sqrt(var / n)
    meta = {
        "d": spec.d,
        "L": spec.L,
        "phi": spec.phi,
        "process": spec.process,
        "gap": spec.gap,
        "seed": spec.seed,
        "n": sc.n,
        "theta": sc.theta,
        "tol": sc.tol,
        "scheme": sc.scheme,
        "blend": sc.blend,
        "smooth": sc.smooth,
        "n_configs": n_configs,
        "n_used": n,
        "skipped": skipped,
    }
    return ViscosityTensor(B=B, stderr=err, n_samples=n, meta=meta, samples=samples)


def sandwich_bounds(config, sc=None):
    """Cell-model sandwich for the dissipation, per basis strain.

    upper: |E|^2 plus the volume-normalized sum of velocity-clamped cell
    energies at each particle's Voronoi inradius; a genuine upper bound up to
    discretization, since each cell competitor extends by the linear flow.
    lower_estimate: same sum with traction-free cells at the equal-volume-share
    radius phi^(-1/3); an estimate only, because traction-free balls do not
    tile the box.  Returns (upper, lower_estimate) arrays over strain_basis(3).
    sc is accepted for symmetry with solver-facing calls and ignored.
    """
    if config.d != 3:
        raise ValidationError("cell-model bounds are 3D only")
    if config.n_particles == 0:
        m = len(strain_basis(3))
        return np.ones(m), np.ones(m)
    diag = geometry_diagnostics(config)
    radii = np.minimum(diag.voronoi_inradius, config.L / 2.0)
    if np.any(radii <= 1.0):
        raise OverlapError("a Voronoi inradius is at most the particle radius")
    vol = config.L**3
    phi = config.n_particles * unit_ball_volume(3) / vol
    r_share = phi ** (-1.0 / 3.0)
    basis = strain_basis(3)
    upper = np.empty(len(basis))
    lower = np.empty(len(basis))
    for k, E in enumerate(basis):
        e2 = float(np.sum(E * E))
        up = math.fsum(cell_model(float(R), "clamped", E).energy() for R in radii)
        lo = config.n_particles * cell_model(r_share, "traction-free", E).energy()
        upper[k] = e2 + up / vol
        lower[k] = e2 + lo / vol
    return upper, lower
