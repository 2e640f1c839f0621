"""Command-line entry point: ``platoon-bench {run,sweep,plot,validate}``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime failure.
The default output directory comes from ``PLATOON_BENCH_OUT`` (else ``results``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

from . import plotting
from .config import (ScenarioError, content_hash, read_scenario_source, parse_scenario,
                     scenario_from_dict, scenario_to_dict)
from .controllers import CostKind
from .results import (dumps, make_manifest, now_utc, read_timeseries, summarize_telemetry,
                      telemetry_csv, trial_csv_name, write_text_atomic)
from .sim import CONTROLLERS, Scenario, run_batch, trial_seed

OUT_ENV = "PLATOON_BENCH_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
PLOT_KINDS = ("trajectories", "rmse-bars", "scaling")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _err(msg: str):
    print(msg, file=sys.stderr)


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "results")


def _controller(name: str) -> str:
    if name not in CONTROLLERS:
        raise ConfigError(f"unknown controller {name!r}; choose one of {', '.join(CONTROLLERS)}")
    return name


def _stability_lines(sc: Scenario) -> tuple[bool, list[str]]:
    if sc.controller == "lfbk":
        return True, [f"lfbk: k_p={sc.lfbk.k_p:g}, k_v={sc.lfbk.k_v:g} "
                      "(no pairwise weight condition applies)"]
    rep = sc.stability_report()
    label = ("s_i >= q_(i+1)" if rep.cost_kind is CostKind.ONE_NORM else "F_i >= G_(i+1)")
    lines = [f"{sc.controller}: checking {label}"] + rep.lines()
    if not rep.satisfied:
        bad = ", ".join(f"({p.vehicle}, {p.follower})" for p in rep.violations)
        lines.append(f"violated pairs: {bad}")
    return rep.satisfied, lines


def _prepare(scenario_ref: str, controller: Optional[str], n: Optional[int],
             allow_unstable: bool):
    path, raw = read_scenario_source(scenario_ref)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ScenarioError(f"{path}: not UTF-8 text") from None
    sc = parse_scenario(text, str(path))
    if controller is not None:
        sc = sc.with_controller(_controller(controller))
    if n is not None:
        if n < 1:
            raise ConfigError("--n must be at least 1")
        sc = sc.with_followers(n)
    ok, lines = _stability_lines(sc)
    if not ok:
        if not allow_unstable:
            raise ConfigError("stability conditions violated (use --allow-unstable to run anyway)\n"
                              + "\n".join(lines))
        _err("warning: stability conditions violated\n" + "\n".join(lines))
    return path, content_hash(raw), sc


def _execute(sc: Scenario, *, scenario_path: str, scenario_hash: str, base_seed: int,
             trials: int, out_dir: Path, command: Sequence[str], jobs: int = 1,
             quiet: bool = False) -> dict:
    """Run trials and write manifest, CSVs and summary into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [trial_seed(base_seed, k) for k in range(trials)]
    names = [trial_csv_name(k) for k in range(trials)] + ["summary.json"]
    manifest = make_manifest(scenario_path=scenario_path, scenario_hash=scenario_hash,
                             scenario_echo=scenario_to_dict(sc), controller=sc.controller,
                             base_seed=base_seed, trials=trials, seeds=seeds, outputs=names,
                             command=command)
    mpath = out_dir / "manifest.json"
    write_text_atomic(mpath, dumps(manifest))

    def progress(k):
        if not quiet:
            _err(f"[{sc.name} {sc.controller} N={sc.platoon.n_followers}] "
                 f"trial {k + 1}/{trials} done")

    try:
        tels = run_batch(sc, trials, base_seed, progress=progress, jobs=jobs)
        for k, tel in enumerate(tels):
            write_text_atomic(out_dir / trial_csv_name(k), telemetry_csv(tel))
        summary = summarize_telemetry(tels)
        summary["d_des"] = sc.platoon.d_des
        write_text_atomic(out_dir / "summary.json", dumps(summary))
    except Exception:
        manifest.update(status="failed", finished=now_utc())
        write_text_atomic(mpath, dumps(manifest))
        raise
    manifest.update(status="complete", finished=now_utc())
    write_text_atomic(mpath, dumps(manifest))
    return summary


def cmd_run(args) -> int:
    if args.manifest:
        try:
            m = json.loads(Path(args.manifest).read_text())
            sc = scenario_from_dict(m["scenario"])
            base_seed, trials = int(m["base_seed"]), int(m["trials"])
            spath, shash = m["scenario_path"], m["scenario_hash"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{args.manifest}: unusable manifest ({exc})") from None
    else:
        if args.scenario is None:
            raise ConfigError("--scenario is required (or --manifest)")
        path, shash, sc = _prepare(args.scenario, args.controller, args.n, args.allow_unstable)
        spath = str(path)
        base_seed = sc.noise.seed if args.seed is None else args.seed
        trials = args.trials
    if trials < 1:
        raise ConfigError("--trials must be at least 1")
    out = Path(args.out_dir or _default_out())
    summary = _execute(sc, scenario_path=spath, scenario_hash=shash, base_seed=base_seed,
                       trials=trials, out_dir=out, command=sys.argv, jobs=args.jobs,
                       quiet=args.quiet)
    fb = summary["solver"]["fallbacks"]
    print(f"{sc.name} {sc.controller} N={sc.platoon.n_followers} trials={trials}: "
          f"wrote {out} (fallbacks: {fb})")
    return EXIT_OK


def _parse_n_list(values) -> list[int]:
    out = []
    for v in values or []:
        for part in str(v).split(","):
            if part.strip():
                try:
                    n = int(part)
                except ValueError:
                    raise ConfigError(f"--n: {part!r} is not an integer") from None
                if n < 1:
                    raise ConfigError("--n values must be at least 1")
                out.append(n)
    return out


def cmd_sweep(args) -> int:
    controllers = [_controller(c) for v in args.controllers for c in v.split(",") if c]
    if not controllers:
        raise ConfigError("--controllers must name at least one controller")
    if args.n is None:
        ns = [None]  # the scenario's own size
    else:
        ns = _parse_n_list(args.n)
        if not ns:
            raise ConfigError("--n needs at least one platoon size")
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    cells = []
    for c in controllers:
        for n in ns:
            path, shash, sc = _prepare(args.scenario, c, n, args.allow_unstable)
            cells.append((c, sc.platoon.n_followers, path, shash, sc))
    out = Path(args.out_dir or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    rows, failed = [], 0
    for c, n, path, shash, sc in cells:
        base_seed = sc.noise.seed if args.seed is None else args.seed
        cell_dir = out / f"{c}_n{n}"
        row = {"controller": c, "n_followers": n, "dir": cell_dir.name, "trials": args.trials}
        try:
            s = _execute(sc, scenario_path=str(path), scenario_hash=shash, base_seed=base_seed,
                         trials=args.trials, out_dir=cell_dir, command=sys.argv,
                         jobs=args.jobs, quiet=args.quiet)
        except Exception as exc:  # one bad cell must not stop the sweep
            failed += 1
            _err(f"cell {c} N={n} failed: {exc}")
            row.update(status="failed", error=str(exc))
            rows.append(row)
            continue
        sp, vel = s["spacing_rmse"]["mean"], s["velocity_rmse"]["mean"]
        row.update(status="complete", spacing_rmse_mean=sum(sp) / len(sp),
                   spacing_rmse_last=sp[-1], spacing_rmse_max=max(sp),
                   velocity_rmse_mean=sum(vel) / len(vel), velocity_rmse_last=vel[-1],
                   fallbacks=s["solver"]["fallbacks"])
        trend = s.get("scaling_trend")
        if trend:
            row["scaling_trend"] = trend
            row["divergent"] = trend["spacing"]["divergent"]
        rows.append(row)
    sizes = sorted({cell[1] for cell in cells})
    write_text_atomic(out / "sweep.json", dumps({"schema_version": 1, "rows": rows,
                                                 "controllers": controllers, "n": sizes}))
    for r in rows:
        if r["status"] == "complete":
            flag = " divergent" if r.get("divergent") else ""
            print(f"{r['controller']:8s} N={r['n_followers']:4d} spacing RMSE mean "
                  f"{r['spacing_rmse_mean']:.4g} last {r['spacing_rmse_last']:.4g}{flag}")
        else:
            print(f"{r['controller']:8s} N={r['n_followers']:4d} FAILED")
    return EXIT_RUNTIME if failed else EXIT_OK


def _run_dirs(root: Path) -> list[Path]:
    if (root / "summary.json").is_file():
        return [root]
    sweep = root / "sweep.json"
    if sweep.is_file():
        rows = json.loads(sweep.read_text())["rows"]
        return [root / r["dir"] for r in rows if r["status"] == "complete"]
    return []


def cmd_plot(args) -> int:
    root = Path(args.results_dir)
    dirs = _run_dirs(root)
    if not dirs:
        raise ConfigError(f"{root}: no results found (expected summary.json or sweep.json)")
    summaries = []
    for d in dirs:
        try:
            summaries.append((d, json.loads((d / "summary.json").read_text())))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{d}: unreadable summary ({exc})") from None
    by_n: dict[int, list] = {}
    for d, s in summaries:
        by_n.setdefault(s["n_followers"], []).append((d, s))
    order = {c: k for k, c in enumerate(CONTROLLERS)}
    out_dir = Path(args.out_dir) if args.out_dir else root
    out_dir.mkdir(parents=True, exist_ok=True)
    single = len(by_n) == 1
    written = []
    for n, group in sorted(by_n.items()):
        group.sort(key=lambda g: order.get(g[1]["controller"], 99))
        suffix = "" if single else f"_n{n}"
        if args.kind == "trajectories":
            runs = []
            for d, s in group:
                csv_path = d / trial_csv_name(0)
                if not csv_path.is_file():
                    raise ConfigError(f"{d}: missing {csv_path.name}")
                runs.append((s["controller"], read_timeseries(csv_path)))
            target = out_dir / f"trajectories{suffix}.svg"
            plotting.trajectories(runs, group[0][1].get("d_des", 1.0), target)
        elif args.kind == "rmse-bars":
            target = out_dir / f"rmse_bars{suffix}.svg"
            plotting.rmse_bars([s for _, s in group], target)
        else:
            target = out_dir / f"scaling{suffix}.svg"
            plotting.scaling([s for _, s in group], target)
        written.append(target)
    for t in written:
        print(t)
    return EXIT_OK


def cmd_validate(args) -> int:
    path, _raw = read_scenario_source(args.scenario)
    sc = parse_scenario(_raw.decode("utf-8", errors="replace"), str(path))
    if args.controller:
        sc = sc.with_controller(_controller(args.controller))
    ok, lines = _stability_lines(sc)
    print(f"{path}: parsed scenario {sc.name!r} ({sc.platoon.n_followers} followers)")
    for line in lines:
        print(line)
    print("result: " + ("all conditions satisfied" if ok else "conditions violated"))
    return EXIT_OK if ok else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="platoon-bench", description="Platoon controller benchmark.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, n_list=False):
        sp.add_argument("--scenario", help="bundled name (hw4, sim100) or path to a TOML file")
        sp.add_argument("--trials", type=int, default=1)
        sp.add_argument("--seed", type=int, help="base seed (default: the scenario's noise seed)")
        sp.add_argument("--out-dir", help=f"output directory (default: ${OUT_ENV} or ./results)")
        sp.add_argument("--allow-unstable", action="store_true",
                        help="run even if the weight conditions are violated")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for trials")
        sp.add_argument("--quiet", action="store_true", help="no progress messages")

    r = sub.add_parser("run", help="run trials of one scenario/controller")
    common(r)
    r.add_argument("--controller", help=f"one of {', '.join(CONTROLLERS)}")
    r.add_argument("--n", type=int, help="override the number of followers")
    r.add_argument("--manifest", help="repeat the run recorded in a manifest")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="controllers x platoon sizes")
    common(s)
    s.add_argument("--controllers", nargs="+", default=list(CONTROLLERS))
    s.add_argument("--n", nargs="*", default=None, help="platoon sizes, e.g. --n 4 25 50 100")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="render SVG figures from results")
    pl.add_argument("--results-dir", required=True)
    pl.add_argument("--kind", required=True, choices=PLOT_KINDS)
    pl.add_argument("--out-dir", help="where to write SVGs (default: the results directory)")
    pl.set_defaults(func=cmd_plot)

    v = sub.add_parser("validate", help="parse a scenario and check stability conditions")
    v.add_argument("--scenario", required=True)
    v.add_argument("--controller", help="check this controller instead of the scenario's")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    if getattr(args, "command", None) == "sweep" and args.scenario is None:
        _err("platoon-bench sweep: error: --scenario is required")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ScenarioError, ConfigError) as exc:
        _err(f"error: {exc}")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        _err("interrupted")
        return EXIT_RUNTIME
    except Exception as exc:
        _err(f"runtime failure: {exc}")
        if os.environ.get("PLATOON_BENCH_DEBUG"):
            traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
