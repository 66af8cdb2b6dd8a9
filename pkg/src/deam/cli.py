"""Command-line entry point: ``deam <command> ...``.

Exit status is 0 on success, 2 for configuration or input-schema problems
and 3 for runtime failures. Every output carries the hash of the resolved
configuration and the master seed, and nothing in an output depends on
``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from deam import __version__
from deam.accumulator import momentary_samples, simulate_trial
from deam.attention import (
    FixationSchedule,
    FixationTarget,
    InvalidConfig,
    generate_schedule,
    scenario_targets,
    theta,
)
from deam.config import RunConfig, load_config
from deam.core import ConfigError, DeamError, InvalidParams, InvalidState, make_condition
from deam.experiment import (
    EmptyCell,
    SummaryCurves,
    curve_xy,
    group_mean,
    run_batch,
    summarize,
    to_records,
    trial_rng,
)
from deam.fitting import InvalidSpace, Objective, config_hash, fit_ga, targets_from_summary
from deam.records import SchemaError, dumps_records, read_records
from deam.stats import ZeroVariance, kruskal_wallis, mse, slope_ttest

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# stream id for draws that are not tied to a trial (trace, momentary)
_AUX_STREAM = 1


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text: str, out: str | None):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _resolved(args) -> RunConfig:
    return load_config(args.config, scenario=args.scenario, seed=args.seed,
                       convention=args.convention)


def _provenance(cfg: RunConfig) -> dict:
    return {"config_hash": config_hash(cfg.to_dict()), "seed": cfg.seed, "version": __version__}


def _comments(prov: dict) -> list[str]:
    return [f"{k}={prov[k]}" for k in ("config_hash", "seed", "version")]


def _parse_comments(comments) -> dict:
    out = {}
    for c in comments:
        k, sep, v = c.partition("=")
        if sep:
            v = v.strip()
            out[k.strip()] = int(v) if k.strip() == "seed" and v.isdigit() else v
    return out


def cmd_simulate(args) -> int:
    cfg = _resolved(args)
    if not args.out:
        raise ConfigError("simulate needs --out (the JSON sidecar is written next to it)")
    batch = cfg.batch.build(cfg.scenario)
    results = run_batch(batch, cfg.model, cfg.fixation, cfg.seed, threads=args.threads)
    records = to_records(results)
    prov = _provenance(cfg)
    out = Path(args.out)
    out.write_text(dumps_records(records, _comments(prov)), encoding="utf-8")
    n_timeout = sum(not r.decided for r in records)
    sidecar = {
        **prov,
        "config": cfg.to_dict(),
        "n_trials": len(records),
        "group_sizes": batch.group_sizes(),
        "timeout_rate": n_timeout / len(records),
    }
    sidecar_path(out).write_text(_dump_json(sidecar), encoding="utf-8")
    return EXIT_OK


def sidecar_path(out: Path) -> Path:
    return out.with_name(out.name + ".json")


def cmd_summarize(args) -> int:
    records, comments = read_records(args.trials)
    cfg = _resolved(args)
    an = cfg.analysis
    bin_width = args.bin_width if args.bin_width is not None else an.bin_width
    window = args.smooth_window if args.smooth_window is not None else an.smooth_window
    if not bin_width > 0 or window < 1 or window % 2 == 0:
        raise ConfigError("bin width must be > 0 and the smoothing window a positive odd integer")
    curves = summarize(records, bin_width, window, an.conditional)
    data = curves.to_dict()
    data["provenance"] = {**_parse_comments(comments),
                          "analysis": {"bin_width": bin_width, "smooth_window": window,
                                       "conditional": an.conditional}}
    _emit(_dump_json(data), args.out)
    return EXIT_OK


def load_curves(path) -> tuple[SummaryCurves, dict]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return SummaryCurves.from_dict(data), data.get("provenance", {})
    except (OSError, UnicodeDecodeError) as exc:
        raise SchemaError(f"cannot read curves {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SchemaError(f"{path}: malformed curves JSON ({exc.__class__.__name__}: {exc})") \
            from exc


def _slope_report(per_group) -> dict:
    try:
        res = slope_ttest(curve_xy(per_group))
    except ZeroVariance as exc:
        return {"warning": f"ZeroVariance: {exc}"}
    except (ValueError, DeamError) as exc:
        return {"warning": f"{exc.__class__.__name__}: {exc}"}
    return {"t": res.t, "df": res.df, "p_two_tailed": res.p_two_tailed,
            "n_groups": len(per_group)}


def stats_report(curves: SummaryCurves, reference: SummaryCurves | None = None,
                 switch_samples: dict | None = None) -> dict:
    """Slope tests on the three main curves, a Kruskal-Wallis test on switch
    counts across clarity levels, and MSE against reference curves.

    With ``switch_samples`` (clarity -> per-trial counts) the Kruskal-Wallis test
    uses trial-level counts; otherwise it uses the per-group means in ``curves``.
    """
    report = {
        "slope_tests": {
            "choice_prob_by_bias": _slope_report(curves.choice_prob_by_bias),
            "rt_by_clarity": _slope_report(curves.rt_by_clarity),
            "switches_by_clarity": _slope_report(curves.switches_by_clarity),
        },
    }
    if switch_samples is None:
        switch_samples, source = {}, "group_means"
        for m in curves.switches_by_clarity.values():
            for lvl, c in m.items():
                switch_samples.setdefault(lvl, []).append(c.value)
    else:
        source = "trials"
    groups = [v for _, v in sorted(switch_samples.items()) if v]
    if len(groups) >= 2:
        kw = kruskal_wallis(groups)
        report["kruskal_wallis_switches"] = {"h": kw.h, "df": kw.df, "p": kw.p, "source": source}
    else:
        report["kruskal_wallis_switches"] = {"warning": "fewer than two clarity levels"}
    if reference is not None:
        out = {}
        for name in ("choice_prob_by_bias", "rt_by_clarity", "switches_by_clarity"):
            a, b = group_mean(getattr(curves, name)), group_mean(getattr(reference, name))
            common = sorted(set(a) & set(b))
            out[name] = mse([a[k] for k in common], [b[k] for k in common]) if common else None
        report["mse_vs_reference"] = out
    report["warnings"] = [f"{k}: {v['warning']}" for k, v in report["slope_tests"].items()
                          if "warning" in v]
    return report


def cmd_stats(args) -> int:
    curves, prov = load_curves(args.curves)
    reference = load_curves(args.reference)[0] if args.reference else None
    samples = None
    if args.trials:
        records, _ = read_records(args.trials)
        samples = {}
        for r in records:
            if r.decided:
                samples.setdefault(r.clarity, []).append(float(r.n_switches))
    report = stats_report(curves, reference, samples)
    report["provenance"] = prov
    for w in report["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    _emit(_dump_json(report), args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _resolved(args)
    curves, target_prov = load_curves(args.targets)
    if curves.scenario is not cfg.scenario:
        raise SchemaError(f"targets are {curves.scenario.value} but the config is "
                          f"{cfg.scenario.value}")
    batch = cfg.batch.build(cfg.scenario)
    try:
        obj = Objective(targets_from_summary(curves), batch, cfg.fixation, cfg.model,
                        cfg.eval_seed, cfg.fit.weights, cfg.fit.metric)
    except ValueError as exc:
        raise SchemaError(f"{args.targets}: {exc}") from exc

    def progress(g, best):
        if args.verbose:
            print(f"generation {g}: best objective {best:.6g}", file=sys.stderr)
    res = fit_ga(obj, cfg.fit.space, cfg.fit.ga, threads=args.threads,
                 n_fresh=cfg.fit.n_fresh, progress=progress)
    out = res.to_dict()
    out["provenance"].update(_provenance(cfg))
    out["provenance"]["targets"] = target_prov
    out["config"] = cfg.to_dict()
    _emit(_dump_json(out), args.out)
    return EXIT_OK


def momentary_csv(z_bar, sigma_z, theta_, dt, n, seed) -> str:
    if n < 0:
        raise ConfigError(f"n must be >= 0, got {n}")
    if sigma_z < 0 or dt <= 0 or not 0 < theta_ <= 1:
        raise ConfigError("need sigma_z >= 0, dt > 0 and 0 < theta <= 1")
    params = {"z_bar": z_bar, "sigma_z": sigma_z, "theta": theta_, "dt": dt, "n": n}
    rng = trial_rng(seed, 0, _AUX_STREAM)
    att, unatt = momentary_samples(n, theta_, sigma_z, z_bar, dt, rng)
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash(params)}\n# seed={seed}\n# version={__version__}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "attended_evidence", "unattended_evidence"])
    for i, (a, u) in enumerate(zip(att.tolist(), unatt.tolist())):
        w.writerow([i, repr(a), repr(u)])
    return buf.getvalue()


def cmd_momentary(args) -> int:
    seed = 0 if args.seed is None else args.seed
    _emit(momentary_csv(args.z_bar, args.sigma_z, args.theta, args.dt, args.n, seed), args.out)
    return EXIT_OK


def trace_csv(cfg: RunConfig, z1: int, z2: int, single: str | None = None) -> str:
    cond = make_condition(cfg.scenario, z1, z2)
    p = cfg.model
    rng = trial_rng(cfg.seed, 0, _AUX_STREAM)
    if single:
        target = FixationTarget(single)
        if target not in scenario_targets(cfg.scenario):
            raise ConfigError(f"--single: {single} is not a {cfg.scenario.value} target")
        sched = FixationSchedule.single(cfg.scenario, target, p.t_max)
    else:
        sched = generate_schedule(cfg.scenario, cfg.fixation, p.t_max, rng)
    out = simulate_trial(cond, p, sched, rng, record_trace=True)
    buf = io.StringIO()
    for line in _comments(_provenance(cfg)):
        buf.write(f"# {line}\n")
    buf.write(f"# z1={z1} z2={z2} theta={theta(cond.clarity, p.m, p.n)!r} "
              f"choice={out.choice.value} rt={out.rt!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "V", "target", "bound_upper", "bound_lower"])
    for s in out.trace:
        w.writerow([repr(s.t), repr(s.V), s.attended.value, repr(s.bound), repr(-s.bound)])
    return buf.getvalue()


def cmd_trace(args) -> int:
    cfg = _resolved(args)
    _emit(trace_csv(cfg, args.z1, args.z2, args.single), args.out)
    return EXIT_OK


def _common(p: argparse.ArgumentParser, config=True):
    if config:
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--scenario", choices=["lane_change", "car_follow"])
        p.add_argument("--convention", choices=["addm", "paper"])
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    p.add_argument("--out", help="output path ('-' or omitted: stdout)")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deam", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a trial batch to CSV plus a JSON sidecar")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("summarize", help="trial CSV (model or human) to curves JSON")
    p.add_argument("trials")
    p.add_argument("--bin-width", type=float)
    p.add_argument("--smooth-window", type=int)
    _common(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("stats", help="slope t-tests, Kruskal-Wallis and MSE on curves JSON")
    p.add_argument("curves")
    p.add_argument("--reference", help="curves JSON to compute MSE against")
    p.add_argument("--trials", help="trial CSV for a trial-level Kruskal-Wallis test")
    _common(p, config=False)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("fit", help="fit the six free parameters to target curves")
    p.add_argument("targets")
    p.add_argument("-v", "--verbose", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("momentary", help="momentary-evidence samples for distribution plots")
    p.add_argument("--z-bar", type=float, default=1.0)
    p.add_argument("--sigma-z", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=0.3)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--n", type=int, default=10000)
    _common(p, config=False)
    p.set_defaults(func=cmd_momentary)

    p = sub.add_parser("trace", help="RDV trajectory of one trial with its bounds")
    p.add_argument("--z1", type=int, required=True)
    p.add_argument("--z2", type=int, required=True)
    p.add_argument("--single", help="attend only this target (e.g. RV) for the whole trial")
    _common(p)
    p.set_defaults(func=cmd_trace)
    return ap


_CONFIG_ERRORS = (ConfigError, SchemaError, InvalidParams, InvalidState, InvalidConfig,
                  InvalidSpace, EmptyCell)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DeamError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
