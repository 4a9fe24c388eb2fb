"""Command-line pipeline.

Subcommands mirror the analysis workflow: ``simulate`` and ``replicate``
for synthetic studies, ``fit`` for a single dataset, ``bootstrap`` and
``permute`` for uncertainty, ``characterize`` for the benefit-score tree.

Every primary artifact embeds ``schema_version`` and the name of a
manifest sidecar that records the command line, input digests, resolved
configuration, and wall time.  Volatile fields live only in the sidecar,
so a rerun with identical arguments, inputs, and seed reproduces the
primary artifacts byte for byte.

Exit codes: 0 success, 1 usage error, 2 invalid data, 3 numerical
failure.  Errors print one machine-parseable line to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import TrialDataset, load_dataset, serialize_dataset, validate
from .errors import DataError, PaftError
from .inference import FitConfig, bootstrap_ci, fit, permutation_test
from .likelihood import PaftParams
from .optim import FitResult, OptimizerConfig, StageConfig
from .residuals import estimate_residuals, km_estimate, prob_death_before_tau
from .simulate import FitStrategy, SimDesign, calibrate_censoring, generate_trial, run_replications
from .tree import TreeConfig, fit_regression_tree, summarize_leaves

SCHEMA_VERSION = "1"
_FMT = ".12g"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# -- artifact plumbing ---------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    """Collects inputs/outputs of one command and writes the manifest."""

    def __init__(self, command: str, argv: list[str], config: dict):
        self.command = command
        self.argv = argv
        self.config = config
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.started = time.monotonic()

    def read_input(self, path: str) -> Path:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"input file not found: {path}")
        self.inputs[str(path)] = _sha256(p)
        return p

    def manifest_name(self, primary: Path) -> str:
        return primary.stem + ".manifest.json"

    def write_json(self, payload: dict, out: str) -> Path:
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        body = dict(payload)
        body["schema_version"] = SCHEMA_VERSION
        body["manifest"] = self.manifest_name(p)
        p.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.outputs.append(str(p))
        return p

    def write_text(self, text: str, out: Path, manifest_for: Path) -> Path:
        out.parent.mkdir(parents=True, exist_ok=True)
        stamped = f"# manifest: {self.manifest_name(manifest_for)}\n" + text
        out.write_text(stamped, encoding="utf-8")
        self.outputs.append(str(out))
        return out

    def finish(self, primary: Path) -> None:
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "tool": "paft",
            "tool_version": __version__,
            "command": self.command,
            "argv": self.argv,
            "inputs": self.inputs,
            "config": self.config,
            "outputs": [Path(o).name for o in self.outputs],
            "wall_time_s": round(time.monotonic() - self.started, 3),
        }
        path = primary.parent / self.manifest_name(primary)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- shared argument handling ---------------------------------------------


def _add_fit_args(p: _Parser, optimizer_default: str = "nelder-mead"):
    p.add_argument("--data", required=True, help="input dataset CSV")
    p.add_argument("--init", default=None,
                   help="comma-separated starting values alpha,tau[,beta...]")
    p.add_argument("--eta", type=float, default=0.01, help="indicator smoothing scale")
    p.add_argument("--optimizer", choices=("nelder-mead", "bfgs"), default=optimizer_default)
    p.add_argument("--stages", type=int, default=1,
                   help="stage cap; 1 = single stage (default), >1 refreshes the bandwidth")
    p.add_argument("--bandwidth-tol", type=float, default=1e-4,
                   help="stop refreshing once the bandwidth moves less than this")
    p.add_argument("--quad-tol", type=float, default=1e-10)
    p.add_argument("--unadjusted", action="store_true",
                   help="drop covariates and fit the two-parameter model")


def _parse_init(text: str, expected: int) -> PaftParams:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise DataError(f"--init must be comma-separated numbers, got {text!r}") from None
    if len(vals) != expected:
        raise DataError(f"--init needs {expected} values (alpha,tau[,beta...]), got {len(vals)}")
    return PaftParams(vals[0], vals[1], tuple(vals[2:]))


def _default_init(ds: TrialDataset, unadjusted: bool, cfg_opt: OptimizerConfig,
                  eta: float, quad_tol: float) -> PaftParams:
    """Starting point when none is given.

    Unadjusted: no lag effect, lag at the median event time.  Adjusted:
    run the unadjusted fit first and splice zeros in for the covariate
    effects.
    """
    event_times = ds.time[ds.event == 1]
    tau0 = float(np.median(event_times)) if event_times.size else float(np.median(ds.time))
    base = PaftParams(0.0, tau0)
    if unadjusted or ds.n_covariates == 0:
        return base
    pre = fit(ds, FitConfig(init=base, eta=eta, optimizer=cfg_opt,
                            unadjusted=True, quad_tol=quad_tol))
    return PaftParams(pre.params.alpha, pre.params.tau, (0.0,) * ds.n_covariates)


def _build_fit_config(args, ds: TrialDataset) -> FitConfig:
    opt = OptimizerConfig(
        method=args.optimizer,
        max_iter=2000 if args.optimizer == "nelder-mead" else 500,
    )
    stages = None
    if args.stages > 1:
        stages = StageConfig(max_stages=args.stages, bandwidth_tol=args.bandwidth_tol)
    d_eff = 0 if args.unadjusted else ds.n_covariates
    if args.init is not None:
        init = _parse_init(args.init, 2 + d_eff)
    else:
        init = _default_init(ds, args.unadjusted, opt, args.eta, args.quad_tol)
        if args.unadjusted:
            init = PaftParams(init.alpha, init.tau)
    return FitConfig(init=init, eta=args.eta, optimizer=opt, stages=stages,
                     unadjusted=args.unadjusted, quad_tol=args.quad_tol)


def _fit_payload(res: FitResult, ds: TrialDataset, cfg: FitConfig) -> dict:
    names = () if cfg.unadjusted else ds.covariate_names
    return {
        "command": "fit",
        "n": len(ds),
        "n_events": ds.n_events,
        "covariates": list(names),
        "eta": res.eta,
        "params": {
            "alpha": res.params.alpha,
            "tau": res.params.tau,
            "beta": {name: b for name, b in zip(names, res.params.beta)},
        },
        "loglik": res.loglik,
        "bandwidth": res.bandwidth,
        "converged": res.converged,
        "warnings": list(res.warnings),
        "stages": [
            {
                "stage": st.stage,
                "bandwidth": st.bandwidth,
                "loglik": st.loglik,
                "iterations": st.iterations,
                "n_evals": st.n_evals,
                "converged": st.converged,
                "params": [st.params.alpha, st.params.tau, *st.params.beta],
            }
            for st in res.stages
        ],
    }


def _config_dict(cfg: FitConfig) -> dict:
    return {
        "init": list(cfg.init.as_vector()),
        "eta": cfg.eta,
        "optimizer": cfg.optimizer.method,
        "stages": None if cfg.stages is None else {
            "max_stages": cfg.stages.max_stages,
            "bandwidth_tol": cfg.stages.bandwidth_tol,
        },
        "unadjusted": cfg.unadjusted,
        "quad_tol": cfg.quad_tol,
    }


# -- subcommands -----------------------------------------------------------


def _cmd_fit(args, argv) -> int:
    run = _Run("fit", argv, {})
    ds = load_dataset(run.read_input(args.data))
    cfg = _build_fit_config(args, ds)
    run.config = _config_dict(cfg)
    res = fit(ds, cfg)
    primary = run.write_json(_fit_payload(res, ds, cfg), args.out)
    run.finish(primary)
    return 0


def _cmd_bootstrap(args, argv) -> int:
    run = _Run("bootstrap", argv, {})
    ds = load_dataset(run.read_input(args.data))
    cfg = _build_fit_config(args, ds)
    run.config = {**_config_dict(cfg), "boot": args.boot, "level": args.level, "seed": args.seed}
    res = bootstrap_ci(ds, cfg, n_boot=args.boot, level=args.level, seed=args.seed)
    payload = _fit_payload(res.observed, ds, cfg)
    payload["command"] = "bootstrap"
    payload["bootstrap"] = {
        "n_boot": res.n_boot,
        "n_failed": res.n_failed,
        "level": res.level,
        "seed": res.seed,
        "order_stats": list(res.order_stats),
        "param_names": list(res.param_names),
        "ci": {k: list(v) for k, v in res.ci.items()},
        "ci_scale": res.ci_scale,
        "se": res.se,
        "draws": res.draws.tolist(),
    }
    primary = run.write_json(payload, args.out)
    run.finish(primary)
    return 0


def _cmd_permute(args, argv) -> int:
    run = _Run("permute", argv, {})
    ds = load_dataset(run.read_input(args.data))
    args.unadjusted = True
    cfg = _build_fit_config(args, ds)
    run.config = {**_config_dict(cfg), "perms": args.perms, "seed": args.seed}
    res = permutation_test(ds, cfg, n_perm=args.perms, seed=args.seed)
    payload = {
        "command": "permute",
        "n": len(ds),
        "observed": {
            "alpha": res.observed.params.alpha,
            "tau": res.observed.params.tau,
            "loglik": res.observed.loglik,
            "bandwidth": res.observed.bandwidth,
        },
        "p_alpha": res.p_alpha,
        "p_tau": res.p_tau,
        "tau_rule": res.tau_rule,
        "n_perm": res.n_perm,
        "n_failed": res.n_failed,
        "seed": res.seed,
        "draws": res.draws.tolist(),
    }
    primary = run.write_json(payload, args.out)
    run.finish(primary)
    return 0


def _cmd_characterize(args, argv) -> int:
    run = _Run("characterize", argv, {
        "min_leaf": args.min_leaf, "max_depth": args.max_depth, "cp": args.cp,
    })
    ds = load_dataset(run.read_input(args.data))
    fit_doc = json.loads(run.read_input(args.fit).read_text(encoding="utf-8"))
    try:
        p = fit_doc["params"]
        beta_map = p.get("beta", {})
        beta = tuple(float(beta_map[name]) for name in ds.covariate_names)
        params = PaftParams(float(p["alpha"]), float(p["tau"]), beta)
    except (KeyError, TypeError) as exc:
        raise DataError(f"fit artifact is missing parameter fields: {exc}") from None
    if params.tau <= 0:
        raise DataError("fit artifact has tau <= 0; benefit scores are undefined")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    resid = estimate_residuals(ds, params)
    curve = km_estimate(resid, ds.event)
    scores = [prob_death_before_tau(ds.covariates[i], params, curve) for i in range(len(ds))]
    tree_path = out_dir / "tree.json"

    lines = ["subject,p_hat,threshold,tail_defective"]
    for i, s in enumerate(scores, start=1):
        lines.append(f"{i},{format(s.p_hat, _FMT)},{format(s.threshold, _FMT)},{int(s.tail_defective)}")
    run.write_text("\n".join(lines) + "\n", out_dir / "phat.csv", tree_path)

    lines = ["time,at_risk,events,censored,survival"]
    for k in range(curve.times.size):
        lines.append(
            f"{format(curve.times[k], _FMT)},{curve.at_risk[k]},{curve.events[k]},"
            f"{curve.censored[k]},{format(curve.survival[k], _FMT)}"
        )
    run.write_text("\n".join(lines) + "\n", out_dir / "km.csv", tree_path)

    phat = np.array([s.p_hat for s in scores])
    tree = fit_regression_tree(
        ds.covariates, phat,
        TreeConfig(min_leaf=args.min_leaf, max_depth=args.max_depth, cp=args.cp),
        ds.covariate_names,
    )
    leaf_rows = summarize_leaves(tree, phat, ds.event)
    cols = ["label", "n", "events", "mean", "min", "q1", "median", "q3", "max"]
    lines = [",".join(cols)]
    for row in leaf_rows:
        lines.append(",".join(
            str(row[c]) if c in ("label", "n", "events") else format(row[c], _FMT) for c in cols
        ))
    run.write_text("\n".join(lines) + "\n", out_dir / "leaves.csv", tree_path)

    primary = run.write_json({"command": "characterize", "n": len(ds), **tree.to_dict()},
                             str(tree_path))
    run.finish(primary)
    return 0


def _cmd_simulate(args, argv) -> int:
    run = _Run("simulate", argv, {"seed": args.seed})
    design = SimDesign.from_json(run.read_input(args.design).read_text(encoding="utf-8"))
    if design.censor_upper is None:
        design = calibrate_censoring(design, seed=args.seed)
    run.config["design"] = design.to_dict()
    ds = generate_trial(design, args.seed)
    out = Path(args.out)
    run.write_text(serialize_dataset(ds), out, out)
    if args.emit_design:
        run.write_json({"command": "simulate", **design.to_dict()}, args.emit_design)
    run.finish(out)
    return 0


def _cmd_replicate(args, argv) -> int:
    run = _Run("replicate", argv, {"reps": args.reps, "seed": args.seed})
    design = SimDesign.from_json(run.read_input(args.design).read_text(encoding="utf-8"))
    if design.censor_upper is None:
        design = calibrate_censoring(design, seed=args.seed)
    d = len(design.beta)
    if args.init is not None:
        init = _parse_init(args.init, 2 + d)
    else:
        init = PaftParams(0.0, 0.0, (0.0,) * d)
    opt = OptimizerConfig(method=args.optimizer,
                          max_iter=2000 if args.optimizer == "nelder-mead" else 500)
    stages = None
    if args.stages > 1:
        stages = StageConfig(max_stages=args.stages, bandwidth_tol=args.bandwidth_tol)
    strategy = FitStrategy(init=init, eta=args.eta, optimizer=opt, stages=stages,
                           quad_tol=args.quad_tol)
    run.config.update({
        "design": design.to_dict(),
        "init": list(init.as_vector()),
        "eta": args.eta,
        "optimizer": args.optimizer,
        "stages": None if stages is None else {
            "max_stages": stages.max_stages, "bandwidth_tol": stages.bandwidth_tol,
        },
    })
    report = run_replications(design, args.reps, strategy, seed=args.seed, workers=args.workers)
    payload = {"command": "replicate", **report.to_dict()}
    primary = run.write_json(payload, args.out)
    csv_path = Path(args.out).with_suffix(".csv")
    lines = ["param,truth,mean,bias,sd"]
    for j, name in enumerate(report.param_names):
        lines.append(
            f"{name},{format(report.truth[j], _FMT)},{format(report.mean[j], _FMT)},"
            f"{format(report.bias[j], _FMT)},{format(report.sd[j], _FMT)}"
        )
    run.write_text("\n".join(lines) + "\n", csv_path, primary)
    run.finish(primary)
    return 0


# -- entry point -----------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="paft", description="Piecewise AFT model with treatment lag")
    parser.add_argument("--version", action="version", version=f"paft {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[], help="fit the model to a dataset")
    _add_fit_args(p)
    p.add_argument("--out", required=True, help="output JSON artifact")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("bootstrap", help="percentile bootstrap confidence intervals")
    _add_fit_args(p)
    p.add_argument("--boot", type=int, default=500, help="number of resamples")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bootstrap)

    p = sub.add_parser("permute", help="permutation test of the unadjusted model")
    _add_fit_args(p, optimizer_default="bfgs")
    p.add_argument("--perms", type=int, default=99, help="number of permutations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_permute)

    p = sub.add_parser("characterize",
                       help="residual survival curve, benefit scores, and leaf table")
    p.add_argument("--data", required=True)
    p.add_argument("--fit", required=True, help="fit JSON artifact with the parameters")
    p.add_argument("--min-leaf", type=int, default=20)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--cp", type=float, default=0.01)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_characterize)

    p = sub.add_parser("simulate", help="draw one synthetic trial from a design")
    p.add_argument("--design", required=True, help="design JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset CSV")
    p.add_argument("--emit-design", default=None,
                   help="write the calibrated design (with censor_upper) here")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("replicate", help="replicated bias study over a design")
    p.add_argument("--design", required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--init", default=None)
    p.add_argument("--eta", type=float, default=0.01)
    p.add_argument("--optimizer", choices=("nelder-mead", "bfgs"), default="nelder-mead")
    p.add_argument("--stages", type=int, default=1)
    p.add_argument("--bandwidth-tol", type=float, default=1e-4)
    p.add_argument("--quad-tol", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="output report JSON (CSV written alongside)")
    p.set_defaults(func=_cmd_replicate)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, argv)
    except _UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 2
    except PaftError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
