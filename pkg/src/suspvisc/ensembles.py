"""Random hardcore sphere configurations on the torus and their statistics.

All particles are unit spheres; a configuration on [0, L)^d is hardcore with
gap rho when every pair of centers is at least 2 + rho apart in the periodic
metric.  Four generators are provided: a cubic lattice, random sequential
addition, Matern II (marked thinning, keep the older point of any close pair),
and a Poisson pair-deletion thinning (both points of any close pair are
removed, so survivors are exactly a hardcore process with product-form
second moment beyond the exclusion range).
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import OverlapError, SaturationError, ValidationError
from .grid import wrap_delta

PROCESSES = ("cubic-lattice", "random-sequential-addition", "matern-II", "poisson-thinned")


def unit_ball_volume(d):
    return {2: np.pi, 3: 4.0 * np.pi / 3.0}[d]


def periodic_dist(a, b, L):
    return np.sqrt(np.sum(wrap_delta(np.asarray(a) - np.asarray(b), L) ** 2, axis=-1))


def pairwise_dists(centers, L):
    """Condensed periodic distance matrix entries (i < j)."""
    centers = np.asarray(centers)
    n = len(centers)
    if n < 2:
        return np.zeros(0)
    diff = wrap_delta(centers[:, None, :] - centers[None, :, :], L)
    dmat = np.sqrt(np.sum(diff**2, axis=-1))
    iu = np.triu_indices(n, k=1)
    return dmat[iu]


@dataclass(frozen=True)
class EnsembleSpec:
    """Target law for a random suspension: dimension, box, process, density."""

    d: int
    L: float
    phi: float
    process: str = "random-sequential-addition"
    gap: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValidationError(f"dimension must be 2 or 3, got {self.d}")
        if self.L < 4.0:
            raise ValidationError(f"box side must be at least 4, got {self.L}")
        if not 0.0 <= self.phi <= 0.2:
            raise ValidationError(f"phi out of range [0, 0.2], got {self.phi}")
        if self.gap < 0.0:
            raise ValidationError(f"hardcore gap must be nonnegative, got {self.gap}")
        if self.process not in PROCESSES:
            raise ValidationError(f"unknown process {self.process!r}; choose from {PROCESSES}")

    @property
    def intensity(self):
        """Number density implied by the target volume fraction."""
        return self.phi / unit_ball_volume(self.d)

    @property
    def target_count(self):
        return int(round(self.phi * self.L**self.d / unit_ball_volume(self.d)))

    def config_seed(self, index):
        """Deterministic per-configuration seed (fixed splitting rule)."""
        ss = np.random.SeedSequence([int(self.seed), int(index)])
        return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class ParticleConfig:
    """A realized configuration of unit spheres on the torus [0, L)^d."""

    d: int
    L: float
    centers: np.ndarray
    gap: float = 0.0
    seed: int = 0
    process: str = "unspecified"
    target_phi: float | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, self.d)
        self.centers = np.mod(self.centers, self.L)
        self.validate()

    @property
    def n_particles(self):
        return len(self.centers)

    @property
    def phi(self):
        return self.n_particles * unit_ball_volume(self.d) / self.L**self.d

    def validate(self):
        if self.d not in (2, 3):
            raise ValidationError(f"dimension must be 2 or 3, got {self.d}")
        if self.L <= 0:
            raise ValidationError("box side must be positive")
        if self.gap < 0:
            raise ValidationError("hardcore gap must be nonnegative")
        if not np.all(np.isfinite(self.centers)):
            raise ValidationError("centers must be finite")
        dmin = 2.0 + self.gap
        dists = pairwise_dists(self.centers, self.L)
        if dists.size and dists.min() < dmin * (1.0 - 1e-12):
            raise OverlapError(
                f"minimum center distance {dists.min():.6f} violates hardcore distance {dmin}"
            )
        # the sequential generator must hit the target count within one particle;
        # lattice counts round to perfect powers and thinned counts fluctuate
        if self.target_phi is not None and self.process == "random-sequential-addition":
            vol = unit_ball_volume(self.d)
            target_n = self.target_phi * self.L**self.d / vol
            if abs(self.n_particles - target_n) > 1.0:
                raise ValidationError(
                    f"realized count {self.n_particles} misses target {target_n:.2f}"
                )

    def to_dict(self):
        return {
            "dim": self.d,
            "box": self.L,
            "gap": self.gap,
            "seed": self.seed,
            "process": self.process,
            "target_phi": self.target_phi,
            "centers": self.centers.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, obj):
        try:
            return cls(
                d=int(obj["dim"]),
                L=float(obj["box"]),
                centers=np.asarray(obj["centers"], dtype=float),
                gap=float(obj.get("gap", 0.0)),
                seed=int(obj.get("seed", 0)),
                process=str(obj.get("process", "unspecified")),
                target_phi=obj.get("target_phi"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed configuration record: {exc}") from exc

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def subset(self, indices):
        """Configuration restricted to the given particle indices."""
        return ParticleConfig(
            d=self.d,
            L=self.L,
            centers=self.centers[list(indices)],
            gap=self.gap,
            seed=self.seed,
            process=f"{self.process}/subset",
            target_phi=None,
        )


def _min_dist_to(centers, x, L):
    if len(centers) == 0:
        return np.inf
    return periodic_dist(np.asarray(centers), np.asarray(x), L).min()


def _generate_lattice(spec):
    vol = unit_ball_volume(spec.d)
    want = spec.phi * spec.L**spec.d / vol
    k = max(1, int(round(want ** (1.0 / spec.d))))
    if spec.phi == 0.0:
        return np.zeros((0, spec.d))
    s = spec.L / k
    if s < 2.0 + spec.gap:
        raise SaturationError(
            f"lattice spacing {s:.3f} below hardcore distance {2.0 + spec.gap:.3f}"
        )
    ax = (np.arange(k) + 0.5) * s
    pts = np.stack(np.meshgrid(*([ax] * spec.d), indexing="ij"), axis=-1).reshape(-1, spec.d)
    return pts


def _generate_rsa(spec, rng):
    target = spec.target_count
    dmin = 2.0 + spec.gap
    centers = []
    budget = 200 * max(target, 1)
    tries = 0
    while len(centers) < target:
        x = rng.uniform(0.0, spec.L, size=spec.d)
        if _min_dist_to(centers, x, spec.L) >= dmin:
            centers.append(x)
        else:
            tries += 1
            if tries > budget:
                raise SaturationError(
                    f"random sequential addition stalled at {len(centers)}/{target} "
                    f"particles after {budget} rejected darts"
                )
    return np.asarray(centers).reshape(-1, spec.d)


def _close_pairs(pts, L, dmin):
    """Index pairs at periodic distance < dmin (dense; fine at desk scale)."""
    m = len(pts)
    if m < 2:
        return np.zeros((0, 2), dtype=int)
    diff = wrap_delta(pts[:, None, :] - pts[None, :, :], L)
    dmat = np.sqrt(np.sum(diff**2, axis=-1))
    iu = np.triu_indices(m, k=1)
    close = dmat[iu] < dmin
    return np.stack([iu[0][close], iu[1][close]], axis=-1)


def _generate_matern2(spec, rng):
    vol_box = spec.L**spec.d
    dmin = 2.0 + spec.gap
    v_ex = unit_ball_volume(spec.d) * dmin**spec.d
    lam = spec.intensity
    if lam * v_ex >= 1.0:
        raise SaturationError(
            f"target intensity {lam:.4g} saturates Matern II thinning "
            f"(lambda * V_excl = {lam * v_ex:.3f} >= 1)"
        )
    # parent intensity giving retained intensity lam under marked thinning
    lam_p = -np.log1p(-lam * v_ex) / v_ex
    m = rng.poisson(lam_p * vol_box)
    pts = rng.uniform(0.0, spec.L, size=(m, spec.d))
    marks = rng.uniform(size=m)
    keep = np.ones(m, dtype=bool)
    for i, j in _close_pairs(pts, spec.L, dmin):
        if marks[i] < marks[j]:
            keep[j] = False
        else:
            keep[i] = False
    return pts[keep]


def _generate_poisson_thinned(spec, rng):
    vol_box = spec.L**spec.d
    dmin = 2.0 + spec.gap
    v_ex = unit_ball_volume(spec.d) * dmin**spec.d
    lam = spec.intensity
    if lam * v_ex > 1.0 / np.e:
        raise SaturationError(
            f"target intensity {lam:.4g} saturates pair-deletion thinning "
            f"(lambda * V_excl = {lam * v_ex:.3f} > 1/e)"
        )
    # retained intensity is lam_p * exp(-lam_p * V_excl); invert with Lambert W
    lam_p = -np.real(special.lambertw(-lam * v_ex, 0)) / v_ex
    m = rng.poisson(lam_p * vol_box)
    pts = rng.uniform(0.0, spec.L, size=(m, spec.d))
    keep = np.ones(m, dtype=bool)
    for i, j in _close_pairs(pts, spec.L, dmin):
        keep[i] = False
        keep[j] = False
    return pts[keep]


def generate(spec, index=0):
    """Draw one configuration from the ensemble; deterministic in (seed, index)."""
    seed = spec.config_seed(index)
    rng = np.random.default_rng(seed)
    if spec.process == "cubic-lattice":
        centers = _generate_lattice(spec)
    elif spec.process == "random-sequential-addition":
        centers = _generate_rsa(spec, rng)
    elif spec.process == "matern-II":
        centers = _generate_matern2(spec, rng)
    elif spec.process == "poisson-thinned":
        centers = _generate_poisson_thinned(spec, rng)
    else:  # pragma: no cover - guarded by EnsembleSpec
        raise ValidationError(f"unknown process {spec.process!r}")
    return ParticleConfig(
        d=spec.d,
        L=spec.L,
        centers=centers,
        gap=spec.gap,
        seed=seed,
        process=spec.process,
        target_phi=spec.phi,
    )


def generate_many(spec, count):
    return [generate(spec, i) for i in range(count)]


# ---------------------------------------------------------------------------
# geometry diagnostics


def _union_find_components(n, edges):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


@dataclass
class GeometryDiagnostics:
    """Per-particle separation statistics and cluster moments of a configuration."""

    nearest_dist: np.ndarray      # distance to nearest other center (L/2 sentinel)
    gaps: np.ndarray              # nearest_dist - 2
    voronoi_inradius: np.ndarray  # min(nearest_dist / 2, L / 2)
    sentinel: np.ndarray          # True where no neighbor exists and L/2 was used
    moment_gap: float             # mean of gap^-r0 per unit volume, times ball volume
    components: list              # particle index lists of fattened-ball clusters
    component_diameter: np.ndarray
    component_volume: np.ndarray
    moment_cluster: float         # sum of diam^r0 * volume over clusters, per box volume
    r0: float
    fatten: float

    def summary(self):
        return {
            "n": len(self.nearest_dist),
            "min_gap": float(self.gaps.min()) if self.gaps.size else None,
            "moment_gap": self.moment_gap,
            "n_components": len(self.components),
            "max_component": max((len(c) for c in self.components), default=0),
            "moment_cluster": self.moment_cluster,
        }


def geometry_diagnostics(config, r0=1.5, fatten=None):
    """Nearest-neighbor gaps, Voronoi inradii, and fattened-ball cluster moments.

    fatten is the cluster radius 1 + rho used to merge particles into
    components; it defaults to 1 + config.gap.  Cluster volume uses the
    union-bound convention member_count * |B_{1+rho}|, and the diameter adds
    one fattened diameter to the max center separation so singletons have
    diameter 2(1+rho).
    """
    if fatten is None:
        fatten = 1.0 + config.gap
    n = config.n_particles
    L, d = config.L, config.d
    half = L / 2.0
    if n == 0:
        empty = np.zeros(0)
        return GeometryDiagnostics(empty, empty, empty, np.zeros(0, bool), 0.0,
                                   [], empty, empty, 0.0, r0, fatten)
    if n == 1:
        nearest = np.array([half])
        sentinel = np.array([True])
        dmat = None
    else:
        diff = wrap_delta(config.centers[:, None, :] - config.centers[None, :, :], L)
        dmat = np.sqrt(np.sum(diff**2, axis=-1))
        np.fill_diagonal(dmat, np.inf)
        nearest = dmat.min(axis=1)
        sentinel = ~np.isfinite(nearest)
        nearest = np.where(sentinel, half, np.minimum(nearest, half))
    gaps = nearest - 2.0
    if np.any(gaps <= 0):
        raise OverlapError("nonpositive nearest-neighbor gap; spheres touch or overlap")
    # neighborless particles own the whole periodic cell (inradius L/2)
    inradius = np.where(sentinel, half, np.minimum(nearest / 2.0, half))
    vol = unit_ball_volume(d)
    moment_gap = float(np.sum(gaps ** (-r0)) * vol / L**d)

    thresh = 2.0 * fatten
    if n == 1 or dmat is None:
        edges = []
    else:
        iu = np.triu_indices(n, k=1)
        close = dmat[iu] < thresh
        edges = list(zip(iu[0][close], iu[1][close]))
    comps = _union_find_components(n, edges)
    diams = []
    vols = []
    for members in comps:
        if len(members) == 1:
            spread = 0.0
        else:
            sub = config.centers[members]
            diff = wrap_delta(sub[:, None, :] - sub[None, :, :], L)
            spread = float(np.sqrt(np.sum(diff**2, axis=-1)).max())
        diams.append(spread + 2.0 * fatten)
        vols.append(len(members) * vol * fatten**d)
    diams = np.asarray(diams)
    vols = np.asarray(vols)
    moment_cluster = float(np.sum(diams**r0 * vols) / L**d)
    return GeometryDiagnostics(
        nearest_dist=nearest,
        gaps=gaps,
        voronoi_inradius=inradius,
        sentinel=sentinel,
        moment_gap=moment_gap,
        components=comps,
        component_diameter=diams,
        component_volume=vols,
        moment_cluster=moment_cluster,
        r0=r0,
        fatten=fatten,
    )


# ---------------------------------------------------------------------------
# pair statistics


@dataclass
class PairCorrelation:
    """Binned two-point function estimate averaged over configurations."""

    d: int
    L: float
    gap: float
    edges: np.ndarray        # bin edges, r in [0, L/2]
    f2: np.ndarray           # two-point density estimate per bin
    h2: np.ndarray           # f2 - lambda^2
    stderr: np.ndarray       # standard error of f2 across configurations
    intensity: float         # mean number density
    n_configs: int
    gamma_hat: float | None = None   # fitted tail decay exponent of |h2|
    gamma_err: float | None = None
    fit_range: tuple = (0.0, 0.0)
    tail_zero: bool = False          # tail consistent with zero at 2 sigma
    empty: bool = False

    @property
    def centers_r(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def lambda2_hat(self):
        """Sup-norm surrogate for the two-point intensity: largest bin of f2."""
        return float(np.max(self.f2)) if self.f2.size else 0.0


def _shell_volumes(edges, d):
    if d == 2:
        return np.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
    return 4.0 * np.pi / 3.0 * (edges[1:] ** 3 - edges[:-1] ** 3)


def pair_correlation(configs, bin_width=0.1, fit_min=None):
    """Estimate the two-point density f2 and its centered version h2.

    Ordered pairs are binned by periodic distance up to L/2; each
    configuration gives one estimate and the spread across configurations
    gives the standard error.  A weighted log-log fit of |h2| over
    statistically significant tail bins (|h2| > 2 stderr, r >= fit_min)
    produces the decay exponent gamma_hat; with fewer than 3 significant
    bins the tail is flagged as consistent with zero instead.
    """
    if not configs:
        raise ValidationError("need at least one configuration")
    d, L, gap = configs[0].d, configs[0].L, configs[0].gap
    for c in configs:
        if (c.d, c.L) != (d, L) or abs(c.gap - gap) > 1e-12:
            raise ValidationError("configurations must share dimension, box, and gap")
    rmax = L / 2.0
    nbins = max(1, int(np.floor(rmax / bin_width)))
    edges = np.linspace(0.0, nbins * bin_width, nbins + 1)
    shells = _shell_volumes(edges, d)
    vol_box = L**d

    per_cfg = np.zeros((len(configs), nbins))
    counts = np.zeros(len(configs))
    for k, c in enumerate(configs):
        counts[k] = c.n_particles
        dists = pairwise_dists(c.centers, L)
        hist, _ = np.histogram(dists, bins=edges)
        per_cfg[k] = 2.0 * hist / (vol_box * shells)  # ordered pairs
    f2 = per_cfg.mean(axis=0)
    if len(configs) > 1:
        stderr = per_cfg.std(axis=0, ddof=1) / np.sqrt(len(configs))
    else:
        stderr = np.zeros(nbins)
    lam = float(counts.mean() / vol_box)
    h2 = f2 - lam**2

    is_empty = counts.sum() == 0
    if fit_min is None:
        fit_min = max(2.0 + gap + 1.0, 4.0)
    rc = 0.5 * (edges[:-1] + edges[1:])
    sel = (rc >= fit_min) & (np.abs(h2) > 2.0 * stderr) & (np.abs(h2) > 0)
    gamma_hat = gamma_err = None
    tail_zero = True
    if sel.sum() >= 3 and not is_empty:
        tail_zero = False
        x = np.log(rc[sel])
        y = np.log(np.abs(h2[sel]))
        w = (np.abs(h2[sel]) / np.where(stderr[sel] > 0, stderr[sel], np.inf)) ** 2
        if not np.any(np.isfinite(w) & (w > 0)):
            w = np.ones_like(x)
        w = np.where(np.isfinite(w) & (w > 0), w, 1.0)
        W = np.sum(w)
        xb = np.sum(w * x) / W
        yb = np.sum(w * y) / W
        sxx = np.sum(w * (x - xb) ** 2)
        slope = np.sum(w * (x - xb) * (y - yb)) / sxx
        gamma_hat = float(-slope)
        resid = y - (yb + slope * (x - xb))
        dof = max(sel.sum() - 2, 1)
        gamma_err = float(np.sqrt(np.sum(w * resid**2) / dof / sxx))
    return PairCorrelation(
        d=d, L=L, gap=gap, edges=edges, f2=f2, h2=h2, stderr=stderr,
        intensity=lam, n_configs=len(configs),
        gamma_hat=gamma_hat, gamma_err=gamma_err,
        fit_range=(float(fit_min), float(rmax)),
        tail_zero=tail_zero, empty=bool(is_empty),
    )


def intensity_estimates(pc):
    """(lambda, lambda2_hat, ordering_ok): checks lambda^2 <= lambda2_hat <= lambda.

    The upper comparison uses the hardcore bound: for a hardcore process the
    two-point density is at most the one-point intensity divided by the
    exclusion volume it frees up; empirically we simply report whether the
    sampled sup of f2 stays between lambda^2 and lambda (valid in the dilute
    regime where lambda < 1).
    """
    lam = pc.intensity
    lam2 = pc.lambda2_hat
    ok = (lam**2 <= lam2 * (1 + 1e-9) + 1e-30) and (lam2 <= lam * (1 + 1e-9) + 1e-30)
    return lam, lam2, bool(ok)
