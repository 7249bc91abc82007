"""Command-line entry point: synthetic sweeps, CT runs and zero-reading detection."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bench import EXPERIMENTS, default_sweep, run_sweep
from .isd import IsdAbort
from .sensing import InvalidSpecError
from .solvers import SolverParams

EXIT_OK, EXIT_SPEC, EXIT_SOLVER = 0, 2, 3

log = logging.getLogger("satrecon")

_PARAM_FIELDS = {f.name: f.type for f in dataclasses.fields(SolverParams)}


class SolverFailure(RuntimeError):
    pass


def read_config(path) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for k, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise InvalidSpecError(f"{path}:{k}: expected key=value")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _param_overrides(pairs) -> dict:
    kw = {}
    for item in pairs or ():
        key, sep, val = item.partition("=")
        key = key.strip()
        if not sep or key not in _PARAM_FIELDS:
            raise InvalidSpecError(f"bad solver setting {item!r}; known keys: {', '.join(_PARAM_FIELDS)}")
        kw[key] = int(val) if key in ("max_outer", "fista_iters") else float(val)
    return kw


def _floats(text):
    return tuple(float(t) for t in str(text).replace(",", " ").split())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="satrecon", description=__doc__)
    ap.add_argument("--config", help="key=value file; command-line flags win")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthetic recovery experiments")
    ssub = synth.add_subparsers(dest="action", required=True)
    sw = ssub.add_parser("sweep", help="run one parameter sweep")
    sw.add_argument("--experiment", choices=EXPERIMENTS)
    sw.add_argument("--trials", type=int)
    sw.add_argument("--seed", type=int)
    sw.add_argument("--grid", help="comma separated grid values (default: the experiment's)")
    sw.add_argument("--methods", help="comma separated subset of methods")
    sw.add_argument("--timing", action="store_true", default=None, help="add wall-time columns (not reproducible)")
    sw.add_argument("--param", action="append", help="solver setting key=value, repeatable")
    sw.add_argument("--out")

    ct = sub.add_parser("ct", help="overexposed CT experiments")
    csub = ct.add_subparsers(dest="action", required=True)
    run = csub.add_parser("run", help="simulate a scan and reconstruct it")
    run.add_argument("--phantom", choices=("knee", "head", "shepp"))
    run.add_argument("--kappa-frac", type=float)
    run.add_argument("--noise-sigma", type=float)
    run.add_argument("--method", choices=("fbp", "sart-isd", "m1bit-isd", "m1bit-ideal"))
    run.add_argument("--nx", type=int)
    run.add_argument("--pixel-size", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--param", action="append", help="solver setting key=value, repeatable")
    run.add_argument("--out")

    det = sub.add_parser("detect", help="initial saturation indicator of an overexposed sinogram")
    det.add_argument("--in", dest="inp")
    det.add_argument("--s-beta", help="'auto' or a threshold applied to every view")
    det.add_argument("--out")
    return ap


_DEFAULTS = {
    "sweep": dict(trials=20, seed=0, out="."),
    "run": dict(phantom="knee", kappa_frac=0.5, noise_sigma=0.0, method="m1bit-isd", nx=128, pixel_size=2.0,
                seed=0, out="."),
    "detect": dict(s_beta="auto"),
}


def _merge(args, cfg: dict):
    """Fill unset flags from the config file, then from built-in defaults."""
    key = args.action if args.command in ("synth", "ct") else args.command
    known = set(vars(args))
    params = list(args.param or []) if hasattr(args, "param") else []
    for k, v in cfg.items():
        if k in _PARAM_FIELDS and hasattr(args, "param"):
            params.insert(0, f"{k}={v}")
        elif k == "in" and args.command == "detect":
            if args.inp is None:
                args.inp = v
        elif k in known:
            if getattr(args, k) is None:
                setattr(args, k, v)
        else:
            raise InvalidSpecError(f"unknown config key {k!r}")
    for k, v in _DEFAULTS.get(key, {}).items():
        if getattr(args, k, None) is None:
            setattr(args, k, v)
    if hasattr(args, "param"):
        args.param = params
    return args


def _cmd_sweep(args) -> int:
    if not args.experiment:
        raise InvalidSpecError("--experiment is required")
    over = {}
    if args.grid:
        over["grid"] = _floats(args.grid)
    if args.methods:
        over["methods"] = tuple(m.strip() for m in str(args.methods).split(",") if m.strip())
    kw = _param_overrides(args.param)
    spec = default_sweep(args.experiment, trials=int(args.trials), seed=int(args.seed), **over)
    if kw:
        if args.experiment.startswith("ct_"):
            from .ct.tvrecon import CT_DEFAULTS

            spec.base["params"] = CT_DEFAULTS.updated(**kw)
        else:
            if "mu" in kw:
                spec.base["mu"] = kw.pop("mu")
            spec.params = spec.params.updated(**kw)
    spec.timing = str(args.timing).lower() in ("1", "true", "yes")
    res = run_sweep(spec)
    meta = spec.describe()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.emit_csv(out / f"{spec.experiment}.csv", res.columns, res.rows, meta)
    io.emit_csv(out / f"{spec.experiment}_trials.csv", res.trial_columns, res.trial_rows, meta)
    bad = [r for r in res.trial_rows if not np.isfinite(float(r[4]))]
    if bad:
        raise SolverFailure(f"{len(bad)} trial(s) produced non-finite results")
    print(out / f"{spec.experiment}.csv")
    return EXIT_OK


def _cmd_ct(args) -> int:
    from .ct.experiment import CtConfig, reconstruct, simulate_scan
    from .ct.tvrecon import CT_DEFAULTS

    kw = _param_overrides(args.param)
    cfg = CtConfig(
        phantom=args.phantom, nx=int(args.nx), pixel_size=float(args.pixel_size), kappa_frac=float(args.kappa_frac),
        noise_sigma=float(args.noise_sigma), seed=int(args.seed), params=CT_DEFAULTS.updated(**kw),
    )
    scan = simulate_scan(cfg)
    try:
        res = reconstruct(args.method, scan, cfg)
    except IsdAbort as exc:
        raise SolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(res.image)):
        raise SolverFailure("reconstruction is not finite")
    meta = {
        "phantom": cfg.phantom, "method": args.method, "nx": cfg.nx, "pixel_size": cfg.pixel_size,
        "kappa_frac": cfg.kappa_frac, "kappa": scan.kappa, "noise_sigma": cfg.noise_sigma, "seed": cfg.seed,
    }
    meta.update({f"params.{k}": v for k, v in dataclasses.asdict(cfg.params).items()})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"ct_{cfg.phantom}_{args.method}"
    rounds = len(res.history) if res.history is not None else 0
    io.emit_csv(out / f"{stem}.csv", ["method", "rmse_hu", "isd_rounds", "converged"],
                [[args.method, res.rmse, rounds, int(bool(res.converged))]], meta)
    if res.history is not None:
        io.emit_csv(out / f"{stem}_isd.csv", ["round", "flips", "false", "missing", "metric"],
                    [[r.round, r.flips, r.false_detections, r.missing_detections, r.metric] for r in res.history.rounds],
                    meta)
    io.emit_matrix_csv(out / f"{stem}_sino.csv", scan.obs.p.reshape(cfg.geometry.shape), meta)
    hi = float(max(scan.truth.max(), 1e-12))
    io.emit_image(out / f"{stem}.pgm", res.image, cfg.pixel_size, window=(0.0, hi))
    print(f"{args.method}: RMSE {res.rmse:.3f} HU")
    return EXIT_OK


def _cmd_detect(args) -> int:
    if not args.inp or not args.out:
        raise InvalidSpecError("--in and --out are required")
    sino, meta = io.read_matrix_csv(args.inp)
    if sino.size == 0:
        raise InvalidSpecError(f"{args.inp}: empty sinogram")
    if str(args.s_beta) == "auto":
        # every reading at or below the view's threshold was reported as zero,
        # so the smallest positive reading bounds the threshold from above
        pos = np.where(sino > 0, sino, np.inf)
        s_beta = np.min(pos, axis=1)
        s_beta = np.where(np.isfinite(s_beta), s_beta, 0.0)
        psi = sino < s_beta[:, None]
    else:
        s_val = float(args.s_beta)
        s_beta = np.full(sino.shape[0], s_val)
        psi = sino <= s_val
    # file name only, so the same sinogram gives the same bytes wherever it lives
    io.emit_matrix_csv(args.out, psi.astype(float), {"source": Path(args.inp).name, "s_beta": args.s_beta,
                                                     "flagged": int(psi.sum())})
    print(f"flagged {int(psi.sum())} of {psi.size} readings")
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = read_config(args.config) if args.config else {}
        args = _merge(args, cfg)
        if args.command == "synth":
            return _cmd_sweep(args)
        if args.command == "ct":
            return _cmd_ct(args)
        return _cmd_detect(args)
    except (InvalidSpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
