"""Command-line front end: campaign configs, seeding, artifact emission.

One process per invocation.  A campaign is described by an INI file whose
values are JSON-typed, overridable by flags; every artifact embeds the full
resolved configuration and master seed, and all writes are atomic.  Exit
codes: 0 success, 2 invalid input, 3 solver non-convergence, 4 campaign
failure.  Timestamps appear only in run.log, never in artifacts.
"""

import argparse
import configparser
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import artifacts
from .analytic import far_kernel_profile
from .dilute import (
    cluster_terms,
    einstein_fit,
    finite_volume_convergence,
    second_order_term,
)
from .ensembles import EnsembleSpec, generate, generate_many, pair_correlation
from .errors import ConvergenceError, SuspviscError, ValidationError
from .spectral import (
    SolverConfig,
    mvp_ratio,
    random_solenoidal_field,
    solve_corrector,
)
from .viscosity import assemble_tensor, sandwich_bounds, strain_basis

OUTDIR_ENV = "SUSPVISC_OUTDIR"
COMMANDS = ("gen", "solve", "effvisc", "einstein", "cluster", "bg",
            "bounds", "mvp", "converge")


# ---------------------------------------------------------------------------
# campaign configuration


@dataclass
class CampaignConfig:
    """Resolved description of one CLI run; round-trips through INI text."""

    command: str
    ensemble: EnsembleSpec
    solver: SolverConfig
    phis: list = field(default_factory=list)
    Ls: list = field(default_factory=list)
    n_configs: int = 4
    output: str = "."
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")
        if self.n_configs < 1:
            raise ValidationError("n_configs must be at least 1")
        if self.jobs < 1:
            raise ValidationError("jobs must be at least 1")
        if not self.phis:
            self.phis = [self.ensemble.phi]
        if not self.Ls:
            self.Ls = [self.ensemble.L]

    def to_ini(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["campaign"] = {
            "command": json.dumps(self.command),
            "phis": json.dumps(list(self.phis)),
            "Ls": json.dumps(list(self.Ls)),
            "n_configs": json.dumps(self.n_configs),
            "output": json.dumps(self.output),
            "seed": json.dumps(self.seed),
            "jobs": json.dumps(self.jobs),
        }
        cp["ensemble"] = {
            k: json.dumps(v) for k, v in asdict(self.ensemble).items()
            if k != "seed"  # the master seed drives the ensemble
        }
        cp["solver"] = {k: json.dumps(v) for k, v in asdict(self.solver).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ValidationError(f"malformed config: {exc}") from exc
        try:
            camp = {k: json.loads(v) for k, v in cp["campaign"].items()}
            ens = {k: json.loads(v) for k, v in cp["ensemble"].items()}
            sol = {k: json.loads(v) for k, v in cp["solver"].items()}
        except (KeyError, json.JSONDecodeError) as exc:
            raise ValidationError(f"malformed config value: {exc}") from exc
        seed = camp.get("seed", 0)
        ens["seed"] = seed
        return cls(
            command=camp["command"],
            ensemble=EnsembleSpec(**ens),
            solver=SolverConfig(**sol),
            phis=camp.get("phis", []),
            Ls=camp.get("Ls", []),
            n_configs=camp.get("n_configs", 4),
            output=camp.get("output", "."),
            seed=seed,
            jobs=camp.get("jobs", 1),
        )

    def to_dict(self):
        return {
            "command": self.command,
            "ensemble": asdict(self.ensemble),
            "solver": asdict(self.solver),
            "phis": list(self.phis),
            "Ls": list(self.Ls),
            "n_configs": self.n_configs,
            "output": self.output,
            "seed": self.seed,
            "jobs": self.jobs,
        }


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="suspvisc",
        description="Effective viscosity of rigid-sphere suspensions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen", "generate a particle configuration"),
        ("solve", "solve one corrector and dump the field"),
        ("effvisc", "assemble the effective viscosity tensor"),
        ("einstein", "dilute sweep over phi plus affine fit"),
        ("cluster", "cluster expansion of a small configuration"),
        ("bg", "pair kernels and the renormalized second-order term"),
        ("bounds", "cell-model sandwich bounds for one configuration"),
        ("mvp", "interior-to-ball energy ratios for random boundary data"),
        ("converge", "campaign tensors across box doublings"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _common_flags(p)
        if name in ("gen", "solve", "cluster", "bounds", "mvp"):
            p.add_argument("--index", type=int, default=0,
                           help="configuration index within the ensemble")
        if name == "cluster":
            p.add_argument("--subset", default=None,
                           help="comma-separated particle indices to keep")
        if name == "bg":
            p.add_argument("--rmax", type=float, default=16.0,
                           help="largest radius in the far-kernel table")
        if name == "mvp":
            p.add_argument("--R", type=float, default=None,
                           help="clamp ball radius (default L/4)")
            p.add_argument("--samples", type=int, default=20)
            p.add_argument("--kappa", type=float, default=None,
                           help="clamp strength (default: theta)")
    return parser


def _common_flags(p):
    p.add_argument("--config", default=None, help="INI campaign file")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--L", type=float, default=None)
    p.add_argument("--phi", default=None,
                   help="volume fraction, or comma-separated sweep")
    p.add_argument("--Ls", default=None, help="comma-separated box sides")
    p.add_argument("--process", default=None)
    p.add_argument("--gap", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--configs", type=int, default=None, dest="n_configs")
    p.add_argument("--n", type=int, default=None, help="grid resolution")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--scheme", default=None, choices=("spectral", "fd"))
    p.add_argument("--blend", default=None,
                   choices=("linear", "geometric", "harmonic"))
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=None)


def _parse_floats(text):
    try:
        return [float(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc


def _resolve(args):
    """Merge config file and flags into a CampaignConfig; flags win."""
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as f:
                cc = CampaignConfig.from_ini(f.read())
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from exc
        ens, sol = cc.ensemble, cc.solver
        phis, Ls = list(cc.phis), list(cc.Ls)
        n_configs, output, seed, jobs = cc.n_configs, cc.output, cc.seed, cc.jobs
    else:
        ens = EnsembleSpec(d=3, L=16.0, phi=0.01)
        sol = SolverConfig()
        phis, Ls = [], []
        n_configs, output, seed, jobs = 4, None, 0, 1

    if args.seed is not None:
        seed = args.seed
    ens_kw = {"seed": seed}
    if args.dim is not None:
        ens_kw["d"] = args.dim
    if args.L is not None:
        ens_kw["L"] = args.L
    if args.process is not None:
        ens_kw["process"] = args.process
    if args.gap is not None:
        ens_kw["gap"] = args.gap
    if args.phi is not None:
        phis = _parse_floats(args.phi)
        ens_kw["phi"] = phis[0]
    if args.Ls is not None:
        Ls = _parse_floats(args.Ls)
    sol_kw = {}
    for name, flag in [("n", args.n), ("theta", args.theta), ("tol", args.tol),
                       ("scheme", args.scheme), ("blend", args.blend)]:
        if flag is not None:
            sol_kw[name] = flag
    if getattr(args, "kappa", None) is not None:
        sol_kw["kappa"] = args.kappa
    if args.n_configs is not None:
        n_configs = args.n_configs
    if args.out is not None:
        output = args.out
    if output is None:
        output = os.environ.get(OUTDIR_ENV, ".")
    if args.jobs is not None:
        jobs = args.jobs

    return CampaignConfig(
        command=args.command,
        ensemble=replace(ens, **ens_kw),
        solver=replace(sol, **sol_kw) if sol_kw else sol,
        phis=phis,
        Ls=Ls,
        n_configs=n_configs,
        output=output,
        seed=seed,
        jobs=jobs,
    )


# ---------------------------------------------------------------------------
# subcommand bodies


def _out(cc, name):
    return os.path.join(cc.output, name)


def _artifact(cc, payload):
    # output path and worker count are plumbing, not part of the result identity
    conf = cc.to_dict()
    del conf["output"], conf["jobs"]
    return {"config": conf, "result": payload}


def _cmd_gen(cc, args, log):
    config = generate(cc.ensemble, index=args.index)
    path = artifacts.write_json(
        _out(cc, "config.json"), _artifact(cc, artifacts.config_artifact(config))
    )
    log.info("wrote %s (%d particles)", path, config.n_particles)
    return 0


def _cmd_solve(cc, args, log):
    config = generate(cc.ensemble, index=args.index)
    E = strain_basis(cc.ensemble.d)[0]
    fld = solve_corrector(config, E, cc.solver)
    artifacts.write_field(_out(cc, "field"), fld)
    artifacts.write_solver_log(_out(cc, "solver_log.csv"), fld.residual_history)
    payload = {
        "dissipation": fld.dissipation,
        "iterations": fld.iterations,
        "residual": fld.residual,
        "rigidity_residual": fld.rigidity_residual,
        "strain": E.tolist(),
        "particles": config.n_particles,
    }
    path = artifacts.write_json(_out(cc, "solve.json"), _artifact(cc, payload))
    log.info("wrote %s (%d iterations)", path, fld.iterations)
    return 0


def _tensor_payload(tensor):
    return {
        "basis": "orthonormal trace-free",
        "B": tensor.B.tolist(),
        "stderr": tensor.stderr.tolist(),
        "meta": tensor.meta,
    }


def _cmd_effvisc(cc, args, log):
    tensor = assemble_tensor(cc.ensemble, cc.solver, cc.n_configs, jobs=cc.jobs)
    artifacts.write_csv(_out(cc, "effvisc.csv"),
                        ["phi", "L", "i", "j", "Bij", "stderr"],
                        artifacts.tensor_csv_rows(tensor))
    path = artifacts.write_json(
        _out(cc, "effvisc.json"), _artifact(cc, _tensor_payload(tensor))
    )
    log.info("wrote %s (iso %.6f)", path, tensor.iso_mean())
    return 0


def _cmd_einstein(cc, args, log):
    if len(cc.phis) < 3:
        raise ValidationError("einstein needs at least 3 phi values (--phi a,b,c)")
    rows = []
    points = []
    for phi in cc.phis:
        spec = replace(cc.ensemble, phi=phi)
        tensor = assemble_tensor(spec, cc.solver, cc.n_configs, jobs=cc.jobs)
        points.append((phi, tensor))
        rows.extend(artifacts.tensor_csv_rows(tensor))
        log.info("phi=%g iso=%.6f", phi, tensor.iso_mean())
    fit = einstein_fit(points)
    artifacts.write_csv(_out(cc, "einstein_slope.csv"),
                        ["phi", "L", "i", "j", "Bij", "stderr"], rows)
    payload = {
        "slope": fit.iso_slope,
        "slope_err": fit.iso_slope_err,
        "slope_matrix": fit.slope.tolist(),
        "intercept_ok": fit.intercept_ok,
        "curvature": fit.curvature,
        "curvature_stat": fit.curvature_stat,
        "phis": list(cc.phis),
    }
    path = artifacts.write_json(_out(cc, "einstein.json"), _artifact(cc, payload))
    log.info("wrote %s (slope %.4f)", path, fit.iso_slope)
    return 0


def _cmd_cluster(cc, args, log):
    config = generate(cc.ensemble, index=args.index)
    if args.subset:
        idx = [int(tok) for tok in args.subset.split(",") if tok.strip()]
        config = config.subset(idx)
    elif config.n_particles > 4:
        config = config.subset(list(range(4)))  # N <= 4 guard upstream
    E = strain_basis(cc.ensemble.d)[0]
    report = cluster_terms(config, E, cc.solver)
    path = artifacts.write_json(
        _out(cc, "cluster.json"), _artifact(cc, report.to_dict())
    )
    log.info("wrote %s (N=%d)", path, report.n_particles)
    return 0


def _cmd_bg(cc, args, log):
    E = strain_basis(cc.ensemble.d)[0]
    configs = generate_many(cc.ensemble, cc.n_configs)
    pc = pair_correlation(configs, bin_width=0.5)
    term = second_order_term(pc, E, cc.solver, strict=False)
    rs_far = np.geomspace(2.5, max(args.rmax, 4.0), 12)
    far = far_kernel_profile(rs_far, E)
    rows = [(r, k, "far") for r, k in zip(rs_far, np.atleast_1d(far))]
    rows += [(r, k, "near") for r, k in zip(term.table["near_nodes"],
                                            term.table["near_values"])]
    artifacts.write_csv(_out(cc, "bg_kernels.csv"), ["r", "K", "kind"], rows)
    payload = {
        "value": term.value,
        "near_term": term.near_term,
        "far_term": term.far_term,
        "near_err": term.near_err,
        "far_err": term.far_err,
        "tail_estimate": term.tail_estimate,
        "tail_fraction": term.tail_fraction,
        "meta": term.meta,
    }
    path = artifacts.write_json(_out(cc, "bg.json"), _artifact(cc, payload))
    log.info("wrote %s (value %.4e)", path, term.value)
    return 0


def _cmd_bounds(cc, args, log):
    config = generate(cc.ensemble, index=args.index)
    upper, lower = sandwich_bounds(config, cc.solver)
    payload = {"lower_estimate": lower.tolist(), "upper": upper.tolist(),
               "particles": config.n_particles}
    path = artifacts.write_json(_out(cc, "bounds.json"), _artifact(cc, payload))
    log.info("wrote %s", path)
    return 0


def _cmd_mvp(cc, args, log):
    config = generate(cc.ensemble, index=args.index)
    sc = cc.solver
    if sc.kappa <= 0:
        sc = replace(sc, kappa=sc.theta)
    R = args.R if args.R is not None else cc.ensemble.L / 4.0
    rng = np.random.default_rng(cc.seed)
    samples = [
        random_solenoidal_field(cc.ensemble.d, cc.ensemble.L, sc.n, 3, rng)
        for _ in range(args.samples)
    ]
    ratios, worst = mvp_ratio(config, R, samples, sc)
    payload = {"R": R, "ratios": ratios, "max_ratio": worst,
               "samples": args.samples, "kappa": sc.kappa}
    path = artifacts.write_json(_out(cc, "mvp.json"), _artifact(cc, payload))
    log.info("wrote %s (max ratio %.4f)", path, worst)
    return 0


def _cmd_converge(cc, args, log):
    if len(cc.Ls) < 3:
        raise ValidationError("converge needs at least 3 box sides (--Ls a,b,c)")
    tab = finite_volume_convergence(cc.ensemble, cc.Ls, cc.solver, cc.n_configs)
    artifacts.write_csv(
        _out(cc, "converge.csv"),
        ["L", "n", "iso", "iso_err", "first_sum", "second_sum", "cluster_size"],
        [tuple(row[k] for k in ("L", "n", "iso", "iso_err", "first_sum",
                                "second_sum", "cluster_size"))
         for row in tab.rows()],
    )
    payload = {
        "Ls": tab.Ls,
        "ns": tab.ns,
        "iso": tab.iso.tolist(),
        "iso_err": tab.iso_err.tolist(),
        "diffs": tab.diffs.tolist(),
        "diff_errs": tab.diff_errs.tolist(),
        "rate": tab.rate,
        "tensors": [_tensor_payload(t) for t in tab.tensors],
        "meta": tab.meta,
    }
    path = artifacts.write_json(_out(cc, "converge.json"), _artifact(cc, payload))
    log.info("wrote %s", path)
    return 0


_HANDLERS = {
    "gen": _cmd_gen,
    "solve": _cmd_solve,
    "effvisc": _cmd_effvisc,
    "einstein": _cmd_einstein,
    "cluster": _cmd_cluster,
    "bg": _cmd_bg,
    "bounds": _cmd_bounds,
    "mvp": _cmd_mvp,
    "converge": _cmd_converge,
}


def _make_logger(outdir):
    log = logging.getLogger("suspvisc.cli")
    log.setLevel(logging.INFO)
    log.handlers.clear()
    os.makedirs(outdir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(outdir, "run.log"))
    handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(message)s")
    )
    log.addHandler(handler)
    return log


def run(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cc = _resolve(args)
        log = _make_logger(cc.output)
        log.info("command=%s seed=%d", cc.command, cc.seed)
        artifacts.atomic_write_text(_out(cc, "campaign.ini"), cc.to_ini())
        return _HANDLERS[cc.command](cc, args, log)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"error: solver did not converge: {exc}", file=sys.stderr)
        return 3
    except SuspviscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
