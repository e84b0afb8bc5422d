"""Command-line entry point.

Every subcommand writes into one output directory and finishes by writing
``manifest.json`` there, listing the configuration, seed and every file
produced. Analysis subcommands read an ensemble directory written by
``ensemble`` (or by ``pipeline``) so results can be recomputed without
re-simulating.

Exit codes: 0 success, 1 I/O failure, 2 invalid configuration,
3 pipeline failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classify import build_dataset, evaluate, gbm_fit, logistic_fit, split_runs
from .dynamics import (EmbeddingSpec, approx_entropy, correlation_dimension,
                       lyapunov_rosenstein, poincare_points, sample_entropy)
from .ensemble import (Ensemble, Label, ensemble_moments, run_ensemble, time_to_zero,
                       time_to_zero_summary)
from .errors import AnalysisError
from .hmm import fit_baum_welch, trajectory_observations, viterbi
from .market import ConfigError, MarketConfig, run_simulation
from .separatrix import (Method, SeparatrixInput, separatrix_classification, separatrix_entropy,
                         separatrix_hinge)
from .stats import adf_test, anderson_darling_normal, mann_whitney_u, trailing_mean, welch_t_test

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_PIPELINE = 0, 1, 2, 3

DIVERGENCE_STEP = 650
DIVERGENCE_WINDOW = 10
DEFAULT_TAUS = (50, 250, 500, 1000)
POINCARE_TAUS = (50, 250, 1000)


# ------------------------------------------------------------------ helpers

def clean(obj):
    """Make ``obj`` JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(clean(obj), indent=2, sort_keys=False) + "\n")
    return Path(path)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return Path(path)


def load_config(path, seed=None):
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config", "must be a flat JSON object")
    if seed is not None:
        data["seed"] = seed
    return MarketConfig.from_dict(data)


def write_manifest(out, subcommand, outputs, started, config=None, base_seed=None, extra=None):
    out = Path(out)
    rel = sorted(str(Path(p).resolve().relative_to(out.resolve())) for p in outputs)
    manifest = {"tool": "bistable_lob", "version": __version__, "subcommand": subcommand,
                "config": config.to_dict() if config is not None else None,
                "base_seed": base_seed, "outputs": rel,
                "duration_seconds": time.monotonic() - started}
    if extra:
        manifest.update(extra)
    write_json(out / "manifest.json", manifest)


def fmt_price(x):
    return f"{x:.2f}"


def _error(exc):
    return {"error": f"{type(exc).__name__}: {exc}"}


# ------------------------------------------------------------------- stages

def stage_analyze(ens, out):
    """Unit-root tests, time to zero, divergence tests, normality, moments."""
    files = []
    eps = ens.config.zero_threshold
    groups = {"positive": ens.indices(Label.POSITIVE), "reached_zero": ens.indices(Label.REACHED_ZERO)}
    table1 = {}
    for name, idx in groups.items():
        runs, stats_, ps = [], [], []
        for i in idx:
            try:
                r = adf_test(ens.trajectories[i].close)
                runs.append({"run": i, **r.to_dict()})
                stats_.append(r.statistic)
                ps.append(r.p_value)
            except AnalysisError as exc:
                runs.append({"run": i, **_error(exc)})
        table1[name] = {"n": len(stats_),
                        "mean_statistic": float(np.mean(stats_)) if stats_ else None,
                        "mean_p_value": float(np.mean(ps)) if ps else None,
                        "runs": runs}
    table1["regression"] = "ct"

    times = [time_to_zero(ens.trajectories[i], eps) for i in range(len(ens))]
    hit = [t for t in times if t is not None]
    table2 = {"criterion": f"first close <= {eps} (0-based step index)",
              "n_reached": len(hit), "times": times}
    try:
        table2["summary"] = time_to_zero_summary(hit)
    except ValueError as exc:
        table2["summary"] = _error(exc)

    divergence = {"step": DIVERGENCE_STEP, "window": DIVERGENCE_WINDOW, "t_test": "welch"}
    try:
        k = DIVERGENCE_STEP - DIVERGENCE_WINDOW  # trailing mean ending at index DIVERGENCE_STEP - 1
        avg = {g: [trailing_mean(ens.trajectories[i].close, DIVERGENCE_WINDOW)[k] for i in idx]
               for g, idx in groups.items()}
        divergence["welch_t"] = welch_t_test(avg["reached_zero"], avg["positive"]).to_dict()
        divergence["mann_whitney_u"] = mann_whitney_u(avg["reached_zero"], avg["positive"]).to_dict()
    except (AnalysisError, ValueError, IndexError) as exc:
        divergence.update(_error(exc))

    try:
        terminals = [ens.trajectories[i].close[-1] for i in groups["positive"]]
        ad = anderson_darling_normal(terminals).to_dict()
        ad["terminal_mean"] = float(np.mean(terminals))
    except AnalysisError as exc:
        ad = _error(exc)

    cols, header = [], ["step"]
    for name, grp in (("all", None), ("reached_zero", Label.REACHED_ZERO), ("positive", Label.POSITIVE)):
        try:
            m, s = ensemble_moments(ens, grp)
        except ValueError:
            m = s = np.full(len(ens.trajectories[0]), np.nan)
        cols += [m, s]
        header += [f"mean_{name}", f"std_{name}"]
    rows = [[t + 1] + [("" if not np.isfinite(c[t]) else f"{c[t]:.6f}") for c in cols]
            for t in range(len(cols[0]))]
    files.append(write_csv(out / "ensemble_moments.csv", header, rows))

    result = {"table1_adf": table1, "table2_time_to_zero": table2,
              "divergence_tests": divergence, "anderson_darling_positive_terminals": ad}
    files.append(write_json(out / "analyze.json", result))
    return result, files


def stage_separatrix(ens, out, bins=20, delta=0.1):
    """All three estimates; a method that cannot run is recorded with its error."""
    inp = SeparatrixInput.from_ensemble(ens)
    runs = ((Method.CLASSIFICATION_ERROR, lambda: separatrix_classification(inp)),
            (Method.ENTROPY_MEDIAN, lambda: separatrix_entropy(inp, bins)),
            (Method.HINGE_MARGIN, lambda: separatrix_hinge(inp, delta)))
    ests = []
    for method, fn in runs:
        try:
            ests.append(dict(fn().to_dict(), t_c=inp.t_c))
        except AnalysisError as exc:
            ests.append(dict(method=method.value, estimate=None, t_c=inp.t_c, **_error(exc)))
    values = [e["estimate"] for e in ests if e["estimate"] is not None]
    if not values:
        raise AnalysisError("no separatrix method succeeded")
    result = {"t_c": inp.t_c, "estimates": ests, "spread": max(values) - min(values)}
    return result, [write_json(out / "separatrix.json", result)]


def stage_dynamics(ens, out, taus=DEFAULT_TAUS, embed_dim=4):
    files = []
    per_run = []
    corr_rows, div_rows = [], []
    for i, traj in enumerate(ens.trajectories):
        x = traj.close
        rec = {"run": i, "label": ens.labels[i].value.value, "by_tau": {}}
        for name, fn in (("apen", approx_entropy), ("sampen", sample_entropy)):
            try:
                rec[name] = fn(x)
            except AnalysisError as exc:
                rec[name] = None
                rec[f"{name}_error"] = str(exc)
        rec["ks_entropy"] = rec["sampen"]
        for tau in taus:
            spec = EmbeddingSpec(embed_dim, tau)
            entry = {}
            try:
                c = correlation_dimension(x, spec)
                entry["d2"], entry["d2_fit_range"] = c.fitted_slope, list(c.fit_range)
            except AnalysisError as exc:
                entry["d2"] = None
                entry["d2_error"] = str(exc)
                c = getattr(exc, "curve", None)
            if c is not None:
                corr_rows += [[i, tau, f"{r:.10g}", f"{v:.10g}"] for r, v in zip(c.radii, c.c_values)]
            try:
                ly = lyapunov_rosenstein(x, spec)
                entry["lle"], entry["mean_period"] = ly.lam, ly.mean_period
                div_rows += [[i, tau, k, f"{v:.10g}"] for k, v in enumerate(ly.divergence_curve)
                             if np.isfinite(v)]
            except AnalysisError as exc:
                entry["lle"] = None
                entry["lle_error"] = str(exc)
            rec["by_tau"][str(tau)] = entry
        per_run.append(rec)

    def summarise(values):
        v = [a for a in values if a is not None]
        if not v:
            return {"n": 0}
        return {"n": len(v), "mean": float(np.mean(v)), "std": float(np.std(v, ddof=1)) if len(v) > 1 else None,
                "min": float(np.min(v)), "max": float(np.max(v))}

    groups = {"all": None, "reached_zero": Label.REACHED_ZERO, "positive": Label.POSITIVE}
    table3, table5, table4 = {}, {}, {}
    for g, lab in groups.items():
        recs = [r for r in per_run if lab is None or r["label"] == lab.value]
        table3[g] = {str(t): summarise([r["by_tau"][str(t)]["d2"] for r in recs]) for t in taus}
        table5[g] = {str(t): summarise([r["by_tau"][str(t)]["lle"] for r in recs]) for t in taus}
        table4[g] = {k: summarise([r[k] for r in recs]) for k in ("apen", "sampen", "ks_entropy")}

    files.append(write_csv(out / "correlation_curves.csv", ["run", "tau", "r", "C"], corr_rows))
    files.append(write_csv(out / "divergence_curves.csv", ["run", "tau", "k", "mean_log_divergence"], div_rows))
    for tau in POINCARE_TAUS:
        pooled = {}
        for i, traj in enumerate(ens.trajectories):
            try:
                for pair, pts in poincare_points(traj.close, embed_dim, tau).items():
                    pooled.setdefault(pair, []).extend([i, fmt_price(a), fmt_price(b)] for a, b in pts)
            except AnalysisError:
                continue
        for (j, k), rows in pooled.items():
            files.append(write_csv(out / f"poincare_tau{tau}_{j}{k}.csv", ["run", f"x{j}", f"x{k}"], rows))
    result = {"embedding_dimension": embed_dim, "taus": list(taus),
              "entropy_parameters": {"m": 2, "r": "0.2*std"},
              "table3_fractal_dimension": table3, "table4_entropy": table4,
              "table5_lyapunov": table5, "runs": per_run}
    files.append(write_json(out / "dynamics.json", result))
    return result, files


def stage_predict(ens, out, stride=10, trees=100, learning_rate=0.1, max_iters=5000,
                  split_seed=0, model="both"):
    data = build_dataset(ens, stride)
    train_runs, test_runs = split_runs(data.run, 0.3, split_seed)
    train, test = data.subset(train_runs), data.subset(test_runs)
    result = {"split": {"level": "trajectory", "test_fraction": 0.3, "seed": split_seed,
                        "train_runs": train_runs, "test_runs": test_runs,
                        "n_train_points": len(train), "n_test_points": len(test)},
              "stride": stride, "label_convention": "1 = positive branch (did not reach zero)"}
    if model in ("logistic", "both"):
        lm = logistic_fit(train.X, train.y, max_iters=max_iters)
        result["logistic"] = {"coefficients": lm.to_dict(),
                              "price_at_half_t014": lm.price_at_half(0.14),
                              "train": evaluate(lm.predict_positive(train.X), train.y),
                              "test": evaluate(lm.predict_positive(test.X), test.y)}
    if model in ("gbm", "both"):
        gm = gbm_fit(train.X, train.y, n_trees=trees, learning_rate=learning_rate)
        result["gbm"] = {"model": gm.to_dict(),
                         "train": evaluate(gm.predict_positive(train.X), train.y),
                         "test": evaluate(gm.predict_positive(test.X), test.y)}
    return result, [write_json(out / "predict.json", result)]


def stage_hmm(sequences, out, seed=0, max_iters=500, names=None):
    fit = fit_baum_welch(sequences, n_states=2, seed=seed, max_iters=max_iters)
    files = []
    names = names or [f"{k:04d}" for k in range(len(sequences))]
    for name, obs in zip(names, sequences):
        path, _ = viterbi(fit.params, obs)
        files.append(write_csv(out / f"viterbi_{name}.csv", ["step", "state"],
                               [[t + 1, int(s)] for t, s in enumerate(path)]))
    result = {"observation": ["price_change", "imbalance"],
              "params": fit.params.to_dict(), "log_likelihood": fit.log_likelihood,
              "iterations": len(fit.log_likelihood_trace), "converged": fit.converged,
              "best_restart": fit.restart, "seed": seed}
    files.append(write_json(out / "hmm.json", result))
    return result, files


# ----------------------------------------------------------------- commands

def _labels_summary(ens):
    counts = {lab.value: 0 for lab in Label}
    for lab in ens.labels:
        counts[lab.value.value] += 1
    return {"counts": counts,
            "runs": [{"run": i, "label": lab.value.value, "tail_mean": lab.tail_mean,
                      "terminal_price": float(ens.trajectories[i].close[-1])}
                     for i, lab in enumerate(ens.labels)]}


def _out_dir(args, default):
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    started = time.monotonic()
    config = load_config(args.config, args.seed)
    out = _out_dir(args, "simulate_out")
    traj = run_simulation(config)
    path = out / "trajectory.csv"
    traj.to_csv(path)
    write_manifest(out, "simulate", [path], started, config, config.seed)
    return EXIT_OK


def _simulate_ensemble(args, out, subcommand, started):
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.seed
    ens = run_ensemble(config, args.runs, seed)
    extra = {"tool": "bistable_lob", "version": __version__, "subcommand": subcommand}
    written = ens.save(out, extra_manifest=extra)
    # the ensemble manifest doubles as this directory's run manifest
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["outputs"] = sorted(p.name for p in written if p.name != "manifest.json")
    manifest["duration_seconds"] = time.monotonic() - started
    write_json(out / "manifest.json", manifest)
    return ens


def cmd_ensemble(args):
    started = time.monotonic()
    _simulate_ensemble(args, _out_dir(args, "ensemble_out"), "ensemble", started)
    return EXIT_OK


def _analysis_command(name, runner):
    def command(args):
        started = time.monotonic()
        ens = Ensemble.load(args.ensemble_dir)
        out = _out_dir(args, Path(args.ensemble_dir) / name)
        _, files = runner(ens, out, args)
        write_manifest(out, name, files, started, ens.config, ens.base_seed,
                       {"ensemble_dir": str(args.ensemble_dir)})
        return EXIT_OK
    return command


def _hmm_inputs(path):
    """Sequences from an ensemble directory or a (delta_price, imbalance) CSV."""
    p = Path(path)
    if p.is_dir():
        ens = Ensemble.load(p)
        return [trajectory_observations(t) for t in ens.trajectories], None, ens
    data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    return [data[:, :2]], ["input"], None


def cmd_hmm(args):
    started = time.monotonic()
    seqs, names, ens = _hmm_inputs(args.input)
    src = Path(args.input)
    default = src / "hmm" if ens is not None else src.with_name(src.stem + "_hmm")
    out = _out_dir(args, default)
    _, files = stage_hmm(seqs, out, seed=args.seed or 0, max_iters=args.max_iters, names=names)
    write_manifest(out, "hmm", files, started, ens.config if ens else None,
                   ens.base_seed if ens else None, {"input": str(args.input)})
    return EXIT_OK


def parse_taus(text):
    try:
        taus = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad --tau list: {text}") from exc
    if not taus or min(taus) < 1:
        raise argparse.ArgumentTypeError("--tau needs positive integers")
    return taus


def cmd_pipeline(args):
    started = time.monotonic()
    out = _out_dir(args, "pipeline_out")
    ens_dir = out / "ensemble"
    try:
        ens = _simulate_ensemble(args, ens_dir, "pipeline", started)
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - any simulation failure aborts the pipeline
        print(f"pipeline: simulation failed: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    report = {"config": ens.config.to_dict(), "base_seed": ens.base_seed, "runs": len(ens),
              "labels": _labels_summary(ens)}
    files = []
    stages = [
        ("analyze", lambda: stage_analyze(ens, out)),
        ("separatrix", lambda: stage_separatrix(ens, out, args.bins, args.delta)),
        ("dynamics", lambda: stage_dynamics(ens, out, args.tau, args.embed_dim)),
        ("predict", lambda: stage_predict(ens, out, args.stride, args.trees, args.learning_rate,
                                          args.max_iters, args.seed or 0)),
        ("hmm", lambda: stage_hmm([trajectory_observations(t) for t in ens.trajectories],
                                  out / "hmm", seed=args.seed or 0, max_iters=args.max_iters)),
    ]
    (out / "hmm").mkdir(exist_ok=True)
    ok = 0
    for name, run in stages:
        try:
            result, written = run()
            files += written
            report[name] = result
            ok += 1
        except (AnalysisError, ValueError, np.linalg.LinAlgError) as exc:
            report[name] = _error(exc)
            print(f"pipeline: stage {name} failed: {exc}", file=sys.stderr)
    files.append(write_json(out / "report.json", report))
    write_manifest(out, "pipeline", files, started, ens.config, ens.base_seed,
                   {"ensemble_dir": "ensemble", "stages_ok": ok})
    return EXIT_OK if ok >= 1 else EXIT_PIPELINE


# ------------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="bistable-lob", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_help="64-bit unsigned seed"):
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--seed", type=int, metavar="U64", help=seed_help)

    sp = sub.add_parser("simulate", help="run one market")
    sp.add_argument("--config", metavar="PATH")
    common(sp, "run seed (overrides the config)")
    sp.set_defaults(func=cmd_simulate)

    for name, func in (("ensemble", cmd_ensemble), ("pipeline", cmd_pipeline)):
        sp = sub.add_parser(name, help="run an ensemble" if name == "ensemble" else "full analysis")
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--runs", type=int, default=50, metavar="N")
        common(sp, "base seed for the per-run seeds")
        sp.set_defaults(func=func)
    pipe = sp

    sp = sub.add_parser("analyze", help="unit-root, time-to-zero and divergence tests")
    sp.add_argument("ensemble_dir")
    sp.add_argument("--out", metavar="DIR")
    sp.set_defaults(func=_analysis_command("analyze", lambda e, o, a: stage_analyze(e, o)))

    sp = sub.add_parser("separatrix", help="boundary price estimates")
    sp.add_argument("ensemble_dir")
    sp.add_argument("--out", metavar="DIR")
    sp.add_argument("--bins", type=int, default=20, metavar="N")
    sp.add_argument("--delta", type=float, default=0.1, metavar="FLOAT")
    sp.set_defaults(func=_analysis_command(
        "separatrix", lambda e, o, a: stage_separatrix(e, o, a.bins, a.delta)))

    sp = sub.add_parser("dynamics", help="dimension, entropy and Lyapunov diagnostics")
    sp.add_argument("ensemble_dir")
    sp.add_argument("--out", metavar="DIR")
    sp.add_argument("--tau", type=parse_taus, default=DEFAULT_TAUS, metavar="LIST")
    sp.add_argument("--embed-dim", type=int, default=4, metavar="N")
    sp.set_defaults(func=_analysis_command(
        "dynamics", lambda e, o, a: stage_dynamics(e, o, a.tau, a.embed_dim)))

    sp = sub.add_parser("predict", help="absorption classifiers")
    sp.add_argument("ensemble_dir")
    sp.add_argument("--out", metavar="DIR")
    sp.add_argument("--model", choices=("logistic", "gbm", "both"), default="both")
    sp.add_argument("--seed", type=int, default=0, metavar="U64", help="train/test split seed")
    sp.add_argument("--stride", type=int, default=10, metavar="N")
    sp.add_argument("--trees", type=int, default=100, metavar="N")
    sp.add_argument("--learning-rate", type=float, default=0.1, metavar="FLOAT")
    sp.add_argument("--max-iters", type=int, default=5000, metavar="N")
    sp.set_defaults(func=_analysis_command(
        "predict", lambda e, o, a: stage_predict(e, o, a.stride, a.trees, a.learning_rate,
                                                 a.max_iters, a.seed, a.model)))

    sp = sub.add_parser("hmm", help="two-state regime model")
    sp.add_argument("input", help="ensemble directory or CSV of delta_price,imbalance")
    sp.add_argument("--out", metavar="DIR")
    sp.add_argument("--seed", type=int, default=0, metavar="U64")
    sp.add_argument("--max-iters", type=int, default=500, metavar="N")
    sp.set_defaults(func=cmd_hmm)

    for flag, kw in (("--stride", dict(type=int, default=10)),
                     ("--tau", dict(type=parse_taus, default=DEFAULT_TAUS)),
                     ("--embed-dim", dict(type=int, default=4)),
                     ("--bins", dict(type=int, default=20)),
                     ("--delta", dict(type=float, default=0.1)),
                     ("--trees", dict(type=int, default=100)),
                     ("--learning-rate", dict(type=float, default=0.1)),
                     ("--max-iters", dict(type=int, default=1000))):
        pipe.add_argument(flag, **kw)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AnalysisError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
