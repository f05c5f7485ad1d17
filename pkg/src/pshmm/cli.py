"""Command-line interface: ``pshmm <command> ...`` or ``python3 -m pshmm <command> ...``.

Exit codes: 0 for a fully valid run, 1 when the run completed but its
result is flagged invalid (e.g. a backtest with too many skipped days),
2 for bad arguments or library errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import baselines, evalkit, theory
from .errors import PshmmError
from .model_sim import make_spec, read_trajectory_csv, sample_trajectory, write_trajectory_csv
from .projection import PshmmModel, fit_pshmm, iter_online_pshmm
from .spectral import ShmmModel, fit_shmm, iter_online_shmm


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _write_predictions(path, rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh)
        first = True
        for t, flag, x in rows:
            if first:
                w.writerow(["t", "flag"] + [f"x_hat_{i + 1}" for i in range(len(x))])
                first = False
            w.writerow([t, int(flag)] + [format(v, ".17g") for v in x])
    finally:
        if path:
            fh.close()


def cmd_simulate(a) -> int:
    spec = make_spec(a.states, a.dim, a.sigma, a.p_stay, a.emission, a.df)
    traj = sample_trajectory(spec, a.length, a.seed)
    write_trajectory_csv(a.out, traj)
    return 0


def cmd_fit(a) -> int:
    X = read_trajectory_csv(a.data).observations
    if a.model == "shmm":
        model = fit_shmm(X, a.d, source=a.basis, method=a.svd, seed=a.seed)
    else:
        model = fit_pshmm(X, a.d, a.variant, a.weights, a.seed, a.basis, a.svd)
    _emit(model.to_json(), a.out)
    return 0


def _load_model(path):
    doc = json.loads(Path(path).read_text())
    return PshmmModel.from_dict(doc) if doc.get("kind") == "pshmm" else ShmmModel.from_dict(doc)


def cmd_predict(a) -> int:
    X = read_trajectory_csv(a.stream).observations
    if a.model_file:
        model = _load_model(a.model_file)
        if isinstance(model, PshmmModel):
            out, _, flags = model.predict_path(X)
        else:
            out, flags = model.predict_path(X)
        rows = ((t, flags[t], out[t]) for t in range(out.shape[0]))
    else:
        if a.warmup is None:
            raise PshmmError("predict needs either --model-file or --warmup")
        if a.model == "shmm":
            it = iter_online_shmm(X, a.warmup, a.d, a.gamma, a.basis, a.svd, a.seed)
        else:
            it = iter_online_pshmm(X, a.warmup, a.d, a.gamma, a.variant, a.weights, a.seed,
                                   a.basis, a.svd)
        rows = ((s.t, s.flag, s.x_hat) for s in it)
    _write_predictions(a.out, rows)
    return 0


def cmd_fit_em(a) -> int:
    X = read_trajectory_csv(a.data).observations
    m = baselines.fit_baum_welch(X, a.states, a.max_iters, a.tol, a.seed, a.restarts)
    doc = {"kind": "ghmm", "pi0": m.pi0.tolist(), "T": m.T.tolist(), "means": m.means.tolist(),
           "variances": m.variances.tolist(), "loglik_trace": m.loglik_trace}
    _emit(json.dumps(doc, indent=2), a.out)
    return 0


def cmd_verify_clt(a) -> int:
    spec = theory.reference_spec(a.sigma) if a.d == 2 else make_spec(a.d, a.d, a.sigma, 0.7)
    rep = theory.clt_experiment(spec, a.T, a.N, a.reps, a.seed, n_cov_triples=a.cov_triples)
    _emit(rep.to_json(), a.out)
    if a.samples:
        with open(a.samples, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "rep", "z"])
            for N, zs in rep.samples.items():
                for i, z in enumerate(zs):
                    w.writerow([N, i, format(z, ".17g")])
    return 0


def cmd_bench(a) -> int:
    cfg = evalkit.BenchConfig(p=a.dim, S=a.states, sigma=a.sigma, length=a.length,
                              warmup=a.warmup, test_steps=a.test_steps, repeats=a.repeats,
                              seed=a.seed)
    if a.methods:
        cfg.methods = tuple(a.methods)
    _emit(json.dumps({"config": vars(cfg) | {"methods": list(cfg.methods)},
                      "seconds": evalkit.bench_timing(cfg)}, indent=2), a.out)
    return 0


def cmd_fixture(a) -> int:
    evalkit.write_market_fixture(a.out_dir, seed=a.seed, n_days=a.days,
                                 minutes_per_day=a.minutes_per_day)
    return 0


def cmd_backtest(a) -> int:
    series = evalkit.load_market_dir(a.data)
    if not series:
        raise PshmmError(f"no CSV files in {a.data}")
    rep = evalkit.run_rolling_backtest(series, a.method, a.train_days, a.states, a.lags,
                                       a.context, a.seed, online=a.online, gamma=a.gamma)
    _emit(rep.to_json(), a.out)
    return 0 if rep.valid else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pshmm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def spectral_opts(p):
        p.add_argument("--model", choices=("pshmm", "shmm"), default="pshmm")
        p.add_argument("--variant", choices=("simplex", "polyhedron"), default="simplex")
        p.add_argument("--weights", choices=("moment", "probability"), default="moment")
        p.add_argument("--d", type=int, default=3, help="reduced dimension / number of states")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--basis", choices=("bigram", "unigram"), default="bigram")
        p.add_argument("--svd", choices=("dense", "randomized"), default="dense")

    p = sub.add_parser("simulate", help="sample an HMM trajectory to CSV")
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--p-stay", type=float, default=0.6)
    p.add_argument("--emission", choices=("gaussian", "student_t"), default="gaussian")
    p.add_argument("--df", type=int, default=None)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a spectral model and write it as JSON")
    p.add_argument("--data", required=True, help="trajectory CSV (t,h,x1..xp)")
    spectral_opts(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="one-step forecasts as CSV rows t,flag,x_hat...")
    p.add_argument("--stream", required=True)
    p.add_argument("--model-file", help="fitted model JSON (offline recursion)")
    p.add_argument("--warmup", type=int, help="online mode: warm-up length")
    p.add_argument("--gamma", type=float, default=0.0)
    spectral_opts(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fit-em", help="Baum-Welch Gaussian HMM")
    p.add_argument("--data", required=True)
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_em)

    p = sub.add_parser("verify-clt", help="Monte-Carlo check of the likelihood CLT")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--T", type=int, default=3)
    p.add_argument("--N", type=int, nargs="+", default=[1000, 10000])
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--cov-triples", type=int, default=10 ** 6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--samples", help="CSV of the scaled errors")
    p.set_defaults(func=cmd_verify_clt)

    p = sub.add_parser("bench", help="timing benchmark")
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--test-steps", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--methods", nargs="+")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fixture", help="write the synthetic market fixture")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=2022)
    p.add_argument("--days", type=int, default=45)
    p.add_argument("--minutes-per-day", type=int, default=evalkit.MINUTES_PER_DAY)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("backtest", help="rolling-window trading backtest")
    p.add_argument("--method", choices=evalkit.BACKTEST_METHODS, default="pshmm")
    p.add_argument("--train-days", type=int, default=30)
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--lags", type=int, default=1)
    p.add_argument("--context", type=int, default=60)
    p.add_argument("--online", action="store_true")
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--data", required=True, help="directory of timestamp,close CSVs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_backtest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PshmmError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
