"""Synthetic trial generation and replicated bias studies.

The generative model mirrors the estimand: a control lifetime
``T0 = exp(beta'x + eps)`` with standard normal ``eps``, a treated
lifetime that switches to the ``exp(alpha)`` time scale once ``T0``
passes the lag ``tau``, and uniform administrative censoring on
``(0, M)``.  ``M`` is calibrated once per design by bisection against a
target censoring fraction, then frozen into the design record so that
every later draw uses the same constant.

Replicate k of a study is generated from the Philox stream keyed by
``(seed, k)``: bit-exact regardless of worker count or execution order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from ._parallel import map_tasks
from .data import TrialDataset
from .errors import DataError, PaftError
from .likelihood import PaftParams
from .optim import OptimizerConfig, StageConfig, fit_multi_stage, fit_single_stage

__all__ = [
    "CovariateSpec",
    "SimDesign",
    "FitStrategy",
    "BiasReport",
    "generate_trial",
    "calibrate_censoring",
    "run_replications",
]


@dataclass(frozen=True)
class CovariateSpec:
    """Marginal law of one covariate.

    ``normal(mean, var)`` or ``lognormal(mean, var)``, where for the
    lognormal the two moments describe the log of the covariate; or
    ``binary(mean)`` for a 0/1 indicator with success probability
    ``mean`` (its variance is implied, so ``var`` is ignored).
    """

    kind: str
    mean: float
    var: float = 0.0

    def __post_init__(self):
        if self.kind not in ("normal", "lognormal", "binary"):
            raise DataError(f"unknown covariate kind: {self.kind!r}")
        if self.kind == "binary":
            if not 0.0 < self.mean < 1.0:
                raise DataError("binary covariate needs mean in (0, 1)")
        elif self.var <= 0:
            raise DataError("covariate variance must be > 0")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "binary":
            return (rng.random(n) < self.mean).astype(float)
        sd = math.sqrt(self.var)
        vals = rng.normal(self.mean, sd, n)
        return np.exp(vals) if self.kind == "lognormal" else vals


@dataclass(frozen=True)
class SimDesign:
    """A complete simulated-trial recipe, JSON round-trippable."""

    n: int
    alpha: float
    tau: float
    beta: tuple[float, ...]
    covariates: tuple[CovariateSpec, ...]
    allocation: float = 0.5
    censor_target: float | None = 0.25
    censor_upper: float | None = None

    def __post_init__(self):
        if self.n < 2:
            raise DataError("design needs n >= 2")
        if len(self.beta) != len(self.covariates):
            raise DataError("one coefficient per covariate spec required")
        if not 0.0 < self.allocation < 1.0:
            raise DataError("allocation must be in (0, 1)")
        if self.censor_target is not None and not 0.0 <= self.censor_target < 1.0:
            raise DataError("censor_target must be in [0, 1)")
        if self.censor_upper is not None and self.censor_upper <= 0:
            raise DataError("censor_upper must be > 0")
        if self.censor_upper is None and self.censor_target is None:
            raise DataError("design needs censor_target or censor_upper")

    @property
    def truth(self) -> np.ndarray:
        return np.array([self.alpha, self.tau, *self.beta])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "alpha": self.alpha,
            "tau": self.tau,
            "beta": list(self.beta),
            "covariates": [
                {"kind": c.kind, "mean": c.mean, "var": c.var} for c in self.covariates
            ],
            "allocation": self.allocation,
            "censor_target": self.censor_target,
            "censor_upper": self.censor_upper,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimDesign":
        try:
            return cls(
                n=int(d["n"]),
                alpha=float(d["alpha"]),
                tau=float(d["tau"]),
                beta=tuple(float(b) for b in d["beta"]),
                covariates=tuple(
                    CovariateSpec(c["kind"], float(c["mean"]), float(c.get("var", 0.0)))
                    for c in d["covariates"]
                ),
                allocation=float(d.get("allocation", 0.5)),
                censor_target=(
                    None if d.get("censor_target") is None else float(d["censor_target"])
                ),
                censor_upper=(
                    None if d.get("censor_upper") is None else float(d["censor_upper"])
                ),
            )
        except KeyError as exc:
            raise DataError(f"design is missing field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "SimDesign":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"design is not valid JSON: {exc}") from None
        return cls.from_dict(payload)


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _draw_uncensored(design: SimDesign, rng: np.random.Generator, n: int):
    z = rng.binomial(1, design.allocation, n)
    x = np.column_stack([c.draw(rng, n) for c in design.covariates]) if design.covariates else np.empty((n, 0))
    eps = rng.standard_normal(n)
    xb = x @ np.asarray(design.beta) if design.covariates else np.zeros(n)
    t0 = np.exp(xb + eps)
    lagged = (z == 1) & (t0 > design.tau)
    t = np.where(lagged, design.tau + math.exp(design.alpha) * (t0 - design.tau), t0)
    return z, x, t


def generate_trial(design: SimDesign, seed) -> TrialDataset:
    """One simulated trial; ``seed`` may be an int or an (int, k) pair."""
    if design.censor_upper is None:
        raise DataError("design has no censor_upper; run calibrate_censoring first")
    rng = _rng(seed)
    z, x, t = _draw_uncensored(design, rng, design.n)
    c = rng.uniform(0.0, design.censor_upper, design.n)
    y = np.minimum(t, c)
    d = (t <= c).astype(int)
    names = tuple(f"x{j + 1}" for j in range(len(design.covariates)))
    return TrialDataset(y, d, z, x if design.covariates else None, names)


def calibrate_censoring(
    design: SimDesign,
    seed: int = 0,
    mc_size: int = 200_000,
    tol: float = 0.005,
    max_iter: int = 200,
) -> SimDesign:
    """Choose the censoring upper bound M by bisection.

    With ``C ~ U(0, M)`` the censoring fraction is
    ``E[min(T, M)] / M`` for a lifetime sample T; a fixed Monte-Carlo
    sample (at least 1e5 draws) makes that a smooth decreasing function
    of M, bisected until the fraction is within ``tol`` of the target.
    Returns the design with ``censor_upper`` frozen in.
    """
    if design.censor_target is None:
        raise DataError("design has no censor_target to calibrate against")
    if mc_size < 100_000:
        raise DataError("mc_size must be at least 1e5")
    target = design.censor_target
    rng = _rng((int(seed), 0x5EED))
    _, _, t = _draw_uncensored(design, rng, mc_size)

    def frac(m):
        return float(np.mean(np.minimum(t / m, 1.0)))

    lo = float(np.quantile(t, 0.01))
    hi = max(float(t.max()), lo * 2)
    while frac(hi) > target:
        hi *= 2.0
        if not math.isfinite(hi):
            raise DataError("censoring calibration diverged")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f = frac(mid)
        if abs(f - target) <= tol:
            return replace(design, censor_upper=mid)
        if f > target:
            lo = mid
        else:
            hi = mid
    raise DataError(
        f"censoring calibration did not reach target {target} within {max_iter} bisections"
    )


# -- replicated bias studies ---------------------------------------------


@dataclass(frozen=True)
class FitStrategy:
    """How each replicate is fitted: starting point and stage schedule."""

    init: PaftParams
    eta: float = 0.01
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    stages: StageConfig | None = None  # None: single stage
    quad_tol: float = 1e-10


@dataclass(frozen=True)
class BiasReport:
    """Replication summary: per-parameter moments, final and per stage.

    ``stage_mean[s]`` aggregates stage ``s+1`` estimates across
    replicates; replicates whose fit stopped earlier contribute their
    final (stationary) estimate to later stages.
    """

    param_names: tuple[str, ...]
    truth: np.ndarray
    estimates: np.ndarray  # (n_ok, p) final-stage estimates
    mean: np.ndarray
    bias: np.ndarray
    sd: np.ndarray
    n_reps: int
    n_failed: int
    seed: int
    stage_mean: np.ndarray | None = None  # (max_stage, p)
    stage_bias: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "param_names": list(self.param_names),
            "truth": self.truth.tolist(),
            "mean": self.mean.tolist(),
            "bias": self.bias.tolist(),
            "sd": self.sd.tolist(),
            "n_reps": self.n_reps,
            "n_failed": self.n_failed,
            "seed": self.seed,
        }
        if self.stage_mean is not None:
            out["stage_mean"] = self.stage_mean.tolist()
            out["stage_bias"] = self.stage_bias.tolist()
        return out


def _replication_task(design, strategy, seed, k):
    try:
        ds = generate_trial(design, (int(seed), int(k)))
        if strategy.stages is None:
            res = fit_single_stage(
                ds, strategy.init, strategy.eta, strategy.optimizer, strategy.quad_tol
            )
        else:
            res = fit_multi_stage(
                ds,
                strategy.init,
                strategy.eta,
                strategy.optimizer,
                strategy.stages,
                strategy.quad_tol,
            )
        trace = np.asarray([st.params.as_vector() for st in res.stages])
        return ("ok", trace)
    except PaftError as exc:
        return ("fail", f"replicate {k}: {exc}")


def run_replications(
    design: SimDesign,
    n_reps: int,
    strategy: FitStrategy,
    seed: int = 0,
    workers: int | None = None,
) -> BiasReport:
    """Generate and fit ``n_reps`` independent trials, summarize bias."""
    if n_reps < 1:
        raise DataError("n_reps must be >= 1")
    if design.censor_upper is None:
        design = calibrate_censoring(design, seed=seed)
    task = partial(_replication_task, design, strategy, seed)
    outcomes = map_tasks(task, range(n_reps), workers)
    traces = [tr for tag, tr in outcomes if tag == "ok"]
    n_failed = n_reps - len(traces)
    if n_failed > 0.10 * n_reps:
        msgs = [m for tag, m in outcomes if tag == "fail"]
        raise PaftError(
            f"replication study unstable: {n_failed}/{n_reps} fits failed "
            f"(first: {msgs[0]})"
        )
    finals = np.asarray([tr[-1] for tr in traces])
    truth = design.truth
    names = ("alpha", "tau") + tuple(f"beta{j + 1}" for j in range(len(design.beta)))
    mean = finals.mean(axis=0)
    sd = finals.std(axis=0, ddof=1) if finals.shape[0] > 1 else np.zeros(truth.size)
    stage_mean = stage_bias = None
    max_stage = max(tr.shape[0] for tr in traces)
    if max_stage > 1:
        padded = np.asarray(
            [np.vstack([tr, np.repeat(tr[-1:], max_stage - tr.shape[0], axis=0)]) for tr in traces]
        )
        stage_mean = padded.mean(axis=0)
        stage_bias = stage_mean - truth[None, :]
    return BiasReport(
        names, truth, finals, mean, mean - truth, sd,
        n_reps, n_failed, seed, stage_mean, stage_bias,
    )
