"""Parameter sweeps over synthetic and CT experiments, with per-trial logs."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .sensing import SyntheticProblemSpec, generate_problem, snr_db
from .solvers import SolverParams, default_hyperparams, solve_lasso, solve_m1bitcsc, solve_m1bitcsr, solve_rdcs

__all__ = [
    "EXPERIMENTS",
    "SYNTH_METHODS",
    "MU_GRID",
    "BENCH_PARAMS",
    "SweepSpec",
    "SweepResult",
    "default_sweep",
    "tune_mu",
    "run_sweep",
    "aggregate",
]

EXPERIMENTS = ("tau_sweep", "gamma_sweep", "saturation_ratio", "sparsity", "measurements", "ct_knee", "ct_head", "ct_noise")
SYNTH_METHODS = ("lasso", "rdcs", "m1bit-csc", "m1bit-csr")
MU_GRID = tuple(float(v) for v in np.logspace(-3.0, 0.5, 15))
# benchmark runs trade the 1e-6 default tolerance for speed; with unit-variance
# sensing rows the unit penalties stall ADMM at small mu, 0.1 converges
BENCH_PARAMS = SolverParams(tol_primal=1e-4, tol_dual=1e-4, theta1=0.1, theta2=0.1)
# lasso keeps only 100 analog rows in the gamma study, too few to tune on
TUNE_METHOD = {"gamma_sweep": "m1bit-csr"}
HELD_OUT_OFFSET = 1_000_003

# (base problem, grid, methods) per synthetic experiment
_SYNTH = {
    "tau_sweep": (
        dict(d=1000, K=100, m=500, n=100, s_n=20.0),
        (0.0, -0.01, -0.02, -0.04, -0.08, -0.15, -0.3, -0.5, -1.0),
        ("m1bit-csc",),
    ),
    "gamma_sweep": (
        dict(d=1000, K=100, m=500, n=400, s_n=10.0),
        tuple(float(10.0**k) for k in range(-6, 2)),
        ("m1bit-csr",),
    ),
    "saturation_ratio": (
        dict(d=1000, K=300, m=500, s_n=10.0),
        (0.0, 0.1, 0.2, 0.3, 0.4),
        SYNTH_METHODS,
    ),
    "sparsity": (
        dict(d=1000, m=500, n=100, s_n=10.0),
        (100, 150, 200, 250, 300, 350),
        SYNTH_METHODS,
    ),
    "measurements": (
        dict(d=1000, K=300, s_n=10.0, ratio=0.2),
        (350, 500, 800, 1000, 1500, 2000),
        SYNTH_METHODS,
    ),
}
_CT = {
    "ct_knee": (dict(phantom="knee", noise_sigma=0.0), (0.5,)),
    "ct_head": (dict(phantom="head", noise_sigma=0.0), (0.6, 0.4)),
    "ct_noise": (dict(phantom="knee", kappa_frac=0.6), (0.0, 0.1)),
}
CT_METHODS = ("fbp", "sart-isd", "m1bit-isd", "m1bit-ideal")


@dataclass
class SweepSpec:
    experiment: str
    grid: tuple = ()
    trials: int = 20
    seed: int = 0
    base: dict = field(default_factory=dict)
    methods: tuple = ()
    params: SolverParams = BENCH_PARAMS
    timing: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.grid:
            raise ValueError("grid must not be empty")

    def describe(self) -> dict:
        out = {"experiment": self.experiment, "trials": self.trials, "seed": self.seed,
               "grid": " ".join(repr(g) for g in self.grid), "methods": " ".join(self.methods)}
        out.update({f"base.{k}": v for k, v in sorted(self.base.items())})
        p = self.params
        out.update({f"params.{k}": getattr(p, k) for k in
                    ("mu", "lam", "gamma", "c", "tau", "theta1", "theta2", "tol_primal", "tol_dual", "max_outer", "fista_iters")})
        return out


def default_sweep(experiment: str, trials: int = 20, seed: int = 0, **over) -> SweepSpec:
    if experiment in _SYNTH:
        base, grid, methods = _SYNTH[experiment]
    elif experiment in _CT:
        base, grid = _CT[experiment]
        methods = CT_METHODS
    else:
        raise ValueError(f"unknown experiment {experiment!r}")
    base = dict(base)
    base.update(over.pop("base", {}))
    kw = dict(experiment=experiment, grid=tuple(grid), trials=trials, seed=seed, base=base, methods=tuple(methods))
    kw.update(over)
    return SweepSpec(**kw)


@dataclass
class SweepResult:
    spec: SweepSpec
    columns: list
    rows: list
    trial_columns: list
    trial_rows: list


def _even(n: float) -> int:
    return int(2 * round(n / 2.0))


def _problem_spec(experiment: str, base: dict, g, seed: int) -> SyntheticProblemSpec:
    b = dict(base)
    b.pop("ratio", None)
    if experiment == "saturation_ratio":
        b["n"] = _even(g * b["m"])
    elif experiment == "sparsity":
        b["K"] = int(g)
    elif experiment == "measurements":
        b["m"] = int(g)
        b["n"] = _even(base.get("ratio", 0.2) * g)
    return SyntheticProblemSpec(seed=seed, **b)


def tune_mu(pspec: SyntheticProblemSpec, grid=MU_GRID, params: SolverParams = BENCH_PARAMS,
            method: str = "lasso") -> float:
    """Best l1 weight for ``method`` on one problem instance; ties go to the smaller weight.

    Lasso walks the grid from the largest weight down, each solve warm-started
    from the previous one.  Other methods are solved cold at their default
    hyperparameters, and the walk stops once the SNR falls 3 dB below the
    best so far: past that point the one-bit models lose their scale and each
    solve runs to the iteration cap.
    """
    pb = generate_problem(pspec)
    ana = ~pb.obs.psi
    rows = pb.U.rows[ana]
    best, best_snr = None, -np.inf
    x = None
    for mu in sorted(grid, reverse=True):
        if method == "lasso":
            x = solve_lasso(rows, pb.obs.p[ana], mu, params, x0=x).x_hat
        else:
            x = _solve_synth(method, pb, mu, params, "", None).x_hat
        v = snr_db(pb.x_true, x)
        if v >= best_snr:
            best, best_snr = mu, v
        elif method != "lasso" and v < best_snr - 3.0:
            break
    return float(best)


def _solve_synth(method: str, pb, mu: float, params: SolverParams, experiment: str, g):
    m, n = pb.obs.m, int(pb.obs.psi.sum())
    tau, lam, gamma = default_hyperparams(m, n)
    prm = params.updated(mu=mu, lam=lam if n else 0.0, tau=tau, gamma=gamma, c=1.0)
    if experiment == "tau_sweep":
        prm = prm.updated(tau=float(g))
    if experiment == "gamma_sweep":
        prm = prm.updated(gamma=float(g))
    ana = ~pb.obs.psi
    if method == "lasso":
        return solve_lasso(pb.U.rows[ana], pb.obs.p[ana], mu, prm)
    if method == "rdcs":
        return solve_rdcs(pb.U, pb.obs, mu, prm)
    if method == "m1bit-csc":
        return solve_m1bitcsc((pb.U, pb.obs), prm)
    if method == "m1bit-csr":
        return solve_m1bitcsr((pb.U, pb.obs), prm)
    raise ValueError(f"unknown method {method!r}")


def _mean_std(vals):
    k = len(vals)
    if k == 0:
        return float("nan"), float("nan")
    mean = math.fsum(vals) / k
    var = math.fsum((v - mean) ** 2 for v in vals) / k
    return mean, math.sqrt(var)


def aggregate(trial_rows, key_idx=(0, 1), metric_idx=4, norm_idx=5, time_idx=None, conv_idx=6):
    """Group per-trial rows by (grid, method) in first-seen order.

    Non-finite metrics are excluded from the mean and counted as failed
    together with non-converged trials.
    """
    groups: dict = {}
    for r in trial_rows:
        groups.setdefault(tuple(r[i] for i in key_idx), []).append(r)
    out = []
    for key, rs in groups.items():
        vals = [float(r[metric_idx]) for r in rs if math.isfinite(float(r[metric_idx]))]
        norms = [float(r[norm_idx]) for r in rs if math.isfinite(float(r[norm_idx]))]
        mean, std = _mean_std(vals)
        row = [*key, mean, std, _mean_std(norms)[0]]
        if time_idx is not None:
            row.append(_mean_std([float(r[time_idx]) for r in rs])[0])
        failed = sum(1 for r in rs if not int(r[conv_idx]) or not math.isfinite(float(r[metric_idx])))
        row += [len(rs), failed]
        out.append(row)
    return out


def _run_synth(spec: SweepSpec):
    trial_cols = ["grid", "method", "trial", "seed", "snr_db", "norm", "converged", "mu"]
    if spec.timing:
        trial_cols.append("wall_time")
    trial_rows = []
    tuned: dict = {}
    for g in spec.grid:
        fixed_mu = spec.base.get("mu")
        if fixed_mu is None:
            held_out = _problem_spec(spec.experiment, spec.base, g, spec.seed + HELD_OUT_OFFSET)
            if held_out not in tuned:
                tuned[held_out] = tune_mu(held_out, params=spec.params,
                                          method=TUNE_METHOD.get(spec.experiment, "lasso"))
            mu = tuned[held_out]
        else:
            mu = float(fixed_mu)
        base = {k: v for k, v in spec.base.items() if k != "mu"}
        for t in range(spec.trials):
            seed = spec.seed + t
            pb = generate_problem(_problem_spec(spec.experiment, base, g, seed))
            for method in spec.methods:
                t0 = time.perf_counter()
                try:
                    sol = _solve_synth(method, pb, mu, spec.params, spec.experiment, g)
                    snr = snr_db(pb.x_true, sol.x_hat)
                    nrm = float(np.linalg.norm(sol.x_hat))
                    conv = int(bool(sol.converged))
                except (FloatingPointError, np.linalg.LinAlgError):
                    snr, nrm, conv = float("nan"), float("nan"), 0
                row = [g, method, t, seed, snr, nrm, conv, mu]
                if spec.timing:
                    row.append(time.perf_counter() - t0)
                trial_rows.append(row)
    cols = ["grid", "method", "mean_snr_db", "std_snr_db", "mean_norm"]
    if spec.timing:
        cols.append("mean_wall_time")
    cols += ["trials", "failed"]
    rows = aggregate(trial_rows, time_idx=8 if spec.timing else None)
    return cols, rows, trial_cols, trial_rows


def _run_ct(spec: SweepSpec):
    from .ct.experiment import CtConfig, reconstruct, simulate_scan

    trial_cols = ["grid", "method", "trial", "seed", "rmse_hu", "isd_rounds", "converged", "kappa_frac", "noise_sigma"]
    if spec.timing:
        trial_cols.append("wall_time")
    trial_rows = []
    for g in spec.grid:
        base = dict(spec.base)
        if spec.experiment == "ct_noise":
            base["noise_sigma"] = float(g)
        else:
            base["kappa_frac"] = float(g)
        for t in range(spec.trials):
            seed = spec.seed + t
            cfg = CtConfig(seed=seed, **base)
            scan = simulate_scan(cfg)
            for method in spec.methods:
                t0 = time.perf_counter()
                res = reconstruct(method, scan, cfg)
                rounds = len(res.history) if res.history is not None else 0
                row = [g, method, t, seed, res.rmse, rounds, int(bool(res.converged)), cfg.kappa_frac, cfg.noise_sigma]
                if spec.timing:
                    row.append(time.perf_counter() - t0)
                trial_rows.append(row)
    cols = ["grid", "method", "mean_rmse_hu", "std_rmse_hu", "mean_isd_rounds"]
    if spec.timing:
        cols.append("mean_wall_time")
    cols += ["trials", "failed"]
    rows = aggregate(trial_rows, norm_idx=5, time_idx=9 if spec.timing else None)
    return cols, rows, trial_cols, trial_rows


def run_sweep(spec: SweepSpec) -> SweepResult:
    if spec.experiment.startswith("ct_"):
        cols, rows, tcols, trows = _run_ct(spec)
    else:
        cols, rows, tcols, trows = _run_synth(spec)
    return SweepResult(spec, cols, rows, tcols, trows)
