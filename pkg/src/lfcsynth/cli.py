"""Command-line front end: ``lfcsynth design|verify|simulate|report``.

Exit codes: 0 success, 2 design infeasible, 3 verification failed,
64 usage or configuration error, 65 incompatible or malformed input data,
70 solver breakdown or simulation divergence.
"""

import argparse
import datetime as _dt
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as lio
from .analysis import verify_design
from .config import ConfigError, load_config, load_schedule
from .sdp import SolverError, dump_problem
from .sim import SimulationDiverged, metrics, regulation_check, simulate
from .synthesis import (InfeasibleDesign, build_design_problem, design_integrated,
                        design_separated)
from .model import design_realization

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VERIFY_FAILED = 3
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_SOFTWARE = 70

log = logging.getLogger("lfcsynth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out_dir, command, cfg, outputs, started, extra=None):
    path = Path(out_dir) / "manifest.json"
    man = {}
    if path.exists():
        try:
            man = json.loads(path.read_text())
        except json.JSONDecodeError:
            man = {}
    man.setdefault("kind", "manifest")
    man["format_version"] = lio.FORMAT_VERSION
    man["tool_version"] = __version__
    runs = man.setdefault("runs", {})
    entry = {
        "config": {"path": cfg.source, "sha256": cfg.sha256} if cfg else None,
        "spec": cfg.spec.to_dict() if cfg else None,
        "solver_options": asdict(cfg.solver) if cfg else None,
        "outputs": {k: str(v) for k, v in outputs.items()},
        "timestamps": {"started": started, "finished": _now()},
    }
    if extra:
        entry.update(extra)
    runs[command] = entry
    lio.dump_json(man, path)


def _load_cfg(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        raise UsageError(f"config error: {exc}") from exc


def _prepare_out(out):
    p = Path(out)
    if p.exists() and not p.is_dir():
        raise UsageError(f"output path {p} exists and is not a directory")
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_design(args):
    started = _now()
    cfg = _load_cfg(args.config)
    spec = cfg.spec
    if args.strips == "off":
        spec = replace(spec, strips=None)
    elif args.strips == "on" and spec.strips is None:
        raise UsageError("--strips on requested but the config has no [design.strips]")
    out = _prepare_out(args.out)
    outputs = {}
    if args.dump_sdp:
        sys_ = cfg.system
        if args.strategy == "integrated" and spec.tie_mode_rate:
            sys_ = design_realization(sys_, spec.tie_mode_rate)
        _, _, prob = build_design_problem(sys_, cfg.output, spec, cfg.solver.pd_floor)
        with open(out / "problem.sdp.txt", "w") as fh:
            dump_problem(prob, fh)
        outputs["problem"] = out / "problem.sdp.txt"
    try:
        if args.strategy == "integrated":
            gains, sol = design_integrated(cfg.system, cfg.output, spec, cfg.solver)
            sols = [sol]
        else:
            gains, sols = design_separated(cfg.system, cfg.output, spec, cfg.solver)
    except InfeasibleDesign as exc:
        lio.dump_json(lio.certificate_dict(exc.solutions), out / "certificate.json")
        outputs["certificate"] = out / "certificate.json"
        _write_manifest(out, "design", cfg, outputs, started,
                        {"strategy": args.strategy, "status": "infeasible"})
        print(f"design: infeasible at margin {exc.margin:.6g} (blocking: {exc.solutions[-1].blocking})")
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"design: solver error: {exc}", file=sys.stderr)
        return EXIT_SOFTWARE
    gains.meta["config_sha256"] = cfg.sha256
    lio.save_gains(gains, out / "gains.json")
    lio.dump_json(lio.certificate_dict(sols), out / "certificate.json")
    outputs.update(gains=out / "gains.json", certificate=out / "certificate.json")
    _write_manifest(out, "design", cfg, outputs, started,
                    {"strategy": args.strategy, "status": "feasible"})
    margin = max(s.scaled_margin for s in sols)
    print(f"design: feasible ({args.strategy}), margin {margin:.6g}; gains in {out / 'gains.json'}")
    return EXIT_OK


def _load_gains_for(path, cfg):
    try:
        gains = lio.load_gains(path)
    except lio.FormatError as exc:
        raise _DataError(str(exc)) from exc
    if gains.N != cfg.system.N:
        raise _DataError(f"gains file has {gains.N} areas, config has {cfg.system.N}")
    for i, a in enumerate(gains.areas):
        if a.K.shape != (1, 5) or a.L1.shape != (5, 3) or a.Phi.shape != (5, 5):
            raise _DataError(f"area {i + 1}: gain dimensions do not match a 5-state area")
    return gains


class _DataError(Exception):
    pass


def cmd_verify(args):
    started = _now()
    cfg = _load_cfg(args.config)
    gains = _load_gains_for(args.gains, cfg)
    spec = cfg.spec
    if args.strips == "off":
        spec = replace(spec, strips=None)
    out = _prepare_out(args.out)
    rep = verify_design(cfg.system, cfg.output, gains, spec, spec.strips)
    vd = lio.verification_dict(rep, cfg.source)
    lio.dump_json(vd, out / "verification.json")
    lio.write_eigen_csv(rep.eigen_rows(), out / "eigenvalues.csv")
    _write_manifest(out, "verify", cfg, {"verification": out / "verification.json",
                                         "eigenvalues": out / "eigenvalues.csv"}, started,
                    {"gains": str(args.gains), "passed": rep.passed})
    for k, v in rep.flags.items():
        print(f"  {k:<18} {'PASS' if v else 'FAIL'}")
    print(f"  hinf lower bound {rep.hinf:.6g} (gamma {rep.gamma:g})")
    if rep.passed:
        print("verify: PASS")
        return EXIT_OK
    print("verify: FAIL (" + ", ".join(rep.failing()) + ")")
    return EXIT_VERIFY_FAILED


def cmd_simulate(args):
    started = _now()
    cfg = _load_cfg(args.config)
    gains = _load_gains_for(args.gains, cfg)
    other = _load_gains_for(args.compare, cfg) if args.compare else None
    sched = load_schedule(args.schedule, cfg.system.N) if args.schedule else cfg.schedule
    simcfg = cfg.sim
    if args.t_end is not None:
        simcfg = replace(simcfg, t_end=args.t_end)
    out = _prepare_out(args.out)
    try:
        traj = simulate(cfg.system, gains, sched, simcfg)
        traj_b = simulate(cfg.system, other, sched, simcfg) if other else None
    except SimulationDiverged as exc:
        print(f"simulate: {exc}", file=sys.stderr)
        return EXIT_SOFTWARE
    outputs = {"trajectory": out / "trajectory.csv", "metrics": out / "metrics.json",
               "plot": out / "plot.gp"}
    lio.write_trajectory_csv(traj, outputs["trajectory"])
    lio.write_plot_script("trajectory.csv", cfg.system.N, outputs["plot"], cfg.name)
    m = metrics(traj)
    md = {"kind": "metrics", "format_version": lio.FORMAT_VERSION, "band": 1e-3,
          "strategy": gains.strategy, "metrics": m,
          "regulation": regulation_check(traj, sched)}
    if traj_b is not None:
        mb = metrics(traj_b)
        label_a = f"{gains.strategy}"
        label_b = f"{other.strategy}" if other.strategy != gains.strategy else "compare"
        if label_a == label_b:
            label_a, label_b = "primary", "compare"
        table = lio.metrics_table({label_a: m, label_b: mb})
        md["compare"] = {"strategy": other.strategy, "metrics": mb,
                         "regulation": regulation_check(traj_b, sched)}
        lio.write_trajectory_csv(traj_b, out / "trajectory_compare.csv")
        (out / "comparison.txt").write_text(table + "\n")
        outputs.update(trajectory_compare=out / "trajectory_compare.csv",
                       comparison=out / "comparison.txt")
        print(table)
    lio.dump_json(md, outputs["metrics"])
    _write_manifest(out, "simulate", cfg, outputs, started, {"gains": str(args.gains)})
    print(f"simulate: wrote {outputs['trajectory']}")
    return EXIT_OK


def _load_optional(path, kind):
    try:
        return lio.read_json(path, kind) if path.exists() else None
    except lio.FormatError:
        return None


def _summarize(run):
    run = Path(run)
    items = {k: _load_optional(run / f"{k}.json", k)
             for k in ("manifest", "certificate", "verification", "metrics")}
    items["gains_present"] = (run / "gains.json").exists()
    items["trajectory_present"] = (run / "trajectory.csv").exists()
    return items


def _report_lines(run, s):
    lines = [f"## Run {run}", ""]
    man = s["manifest"]
    if man:
        for cmd, entry in man.get("runs", {}).items():
            c = entry.get("config") or {}
            lines.append(f"- {cmd}: config {c.get('path')} (sha256 {str(c.get('sha256'))[:12]})")
    else:
        lines.append("- manifest: ABSENT")
    cert = s["certificate"]
    if cert:
        state = "feasible" if cert["feasible"] else "INFEASIBLE"
        margins = ", ".join(f"{p['scaled_margin']:.4g}" for p in cert["problems"])
        lines.append(f"- design: {state} (scaled margins {margins})")
    else:
        lines.append("- design: ABSENT")
    ver = s["verification"]
    if ver:
        lines.append(f"- verification: {'PASS' if ver['passed'] else 'FAIL'}")
        for k, v in ver["flags"].items():
            lines.append(f"    - {k}: {'PASS' if v else 'FAIL'}")
        lines.append(f"    - hinf lower bound {ver['hinf_lower_bound']} vs gamma {ver['gamma']}")
        lines.append(f"    - analysis residual {ver['analysis_residual']}")
    else:
        lines.append("- verification: ABSENT")
    met = s["metrics"]
    if met and s["trajectory_present"]:
        reg = all(r["passed"] for r in met["regulation"])
        lines.append(f"- simulation: regulation {'PASS' if reg else 'FAIL'}")
        for sig, v in met["metrics"].items():
            lines.append(f"    - {sig}: peak {v['peak']:.4g}, settling {v['settling_time']}, "
                         f"ise {v['ise']:.4g}")
    else:
        lines.append("- simulation: ABSENT (no trajectory in this run directory)")
    return lines


def _overall(s):
    parts = []
    if s["certificate"]:
        parts.append(s["certificate"]["feasible"])
    if s["verification"]:
        parts.append(s["verification"]["passed"])
    if s["metrics"] and s["trajectory_present"]:
        parts.append(all(r["passed"] for r in s["metrics"]["regulation"]))
    complete = bool(s["certificate"] and s["verification"] and s["metrics"]
                    and s["trajectory_present"])
    return all(parts) and bool(parts), complete


def cmd_report(args):
    runs = [Path(r) for r in args.run_dirs]
    for r in runs:
        if not r.is_dir():
            raise UsageError(f"run directory {r} does not exist")
    sums = [_summarize(r) for r in runs]
    lines = ["# Design run report", ""]
    for r, s in zip(runs, sums):
        ok, complete = _overall(s)
        status = "PASS" if ok and complete else ("INCOMPLETE" if ok else "FAIL")
        lines.append(f"Summary for {r}: {status}")
    lines.append("")
    for r, s in zip(runs, sums):
        lines += _report_lines(r, s) + [""]
    if len(runs) == 2:
        a, b = sums
        lines += ["## Comparison", "", f"--- {runs[0]}", f"+++ {runs[1]}"]
        va, vb = a["verification"] or {}, b["verification"] or {}
        for key in ("hinf_lower_bound", "analysis_residual", "max_real_closed_loop"):
            if va.get(key) != vb.get(key):
                lines += [f"- {key}: {va.get(key)}", f"+ {key}: {vb.get(key)}"]
        ma = (a["metrics"] or {}).get("metrics", {})
        mb = (b["metrics"] or {}).get("metrics", {})
        for sig in sorted(set(ma) | set(mb)):
            for m in ("peak", "ise"):
                xa = ma.get(sig, {}).get(m)
                xb = mb.get(sig, {}).get(m)
                if xa != xb:
                    lines += [f"- {sig}.{m}: {xa}", f"+ {sig}.{m}: {xb}"]
    text = "\n".join(lines) + "\n"
    dest = Path(args.out) if args.out else runs[0] / "report.md"
    dest.write_text(text)
    print(text, end="")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="lfcsynth", description="Decentralized observer-based LFC synthesis")
    p.add_argument("--version", action="version", version=f"lfcsynth {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("design", help="solve the design LMIs and write gains")
    d.add_argument("config", help="config file or bundled:<name>")
    d.add_argument("--strategy", choices=("integrated", "separated"), default="integrated")
    d.add_argument("--strips", choices=("on", "off"), default=None,
                   help="use (on) or ignore (off) the config's strips; default: use if present")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--dump-sdp", action="store_true", help="also write the sparse problem dump")
    d.set_defaults(func=cmd_design)

    v = sub.add_parser("verify", help="check a gains file against a config")
    v.add_argument("gains")
    v.add_argument("config")
    v.add_argument("--strips", choices=("on", "off"), default=None)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="simulate a gains file under a step schedule")
    s.add_argument("gains")
    s.add_argument("config")
    s.add_argument("--schedule", help="TOML file with [[events]] overriding the config's")
    s.add_argument("--compare", help="second gains file simulated side by side")
    s.add_argument("--t-end", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="summarize one run directory or compare two")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("--out", help="report path (default: <first run>/report.md)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report" and len(args.run_dirs) > 2:
        parser.error("report takes one or two run directories")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lfcsynth: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (_DataError, ConfigError) as exc:
        print(f"lfcsynth: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc, _DataError) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
