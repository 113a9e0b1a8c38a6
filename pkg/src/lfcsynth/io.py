"""Serialization of gains, certificates, reports and trajectories.

JSON files carry a ``format_version`` key and CSV files start with a
``# format-version: N`` line. Floats are written with ``repr`` (shortest
round-trip form), so a value read back is bit-identical to the one written.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .synthesis import AreaGains, DesignSpec, GainSet

FORMAT_VERSION = 1


class FormatError(ValueError):
    """A file does not match the expected format or version."""


def _mat(M):
    return None if M is None else [[float(v) for v in row] for row in np.atleast_2d(M)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return [[float(z.real), float(z.imag)] for z in obj.ravel()]
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj, path):
    text = json.dumps(_jsonable(obj), indent=1, sort_keys=False, allow_nan=False)
    Path(path).write_text(text + "\n")


def read_json(path, kind):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read {kind} file {path}: {exc}") from exc
    if not isinstance(data, dict) or data.get("kind") != kind:
        raise FormatError(f"{path} is not a {kind} file")
    if data.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {data.get('format_version')!r}")
    return data


def gains_to_dict(g: GainSet):
    return {
        "kind": "gains",
        "format_version": FORMAT_VERSION,
        "strategy": g.strategy,
        "spec": g.spec.to_dict() if g.spec else None,
        "meta": g.meta,
        "areas": [{name: _mat(getattr(a, name)) for name in AreaGains.FIELDS} for a in g.areas],
    }


def gains_from_dict(d) -> GainSet:
    areas = []
    for k, a in enumerate(d["areas"]):
        vals = {}
        for name in AreaGains.FIELDS:
            v = a.get(name)
            if v is None:
                if name in ("Z", "Q"):
                    vals[name] = None
                    continue
                raise FormatError(f"area {k + 1}: missing gain {name}")
            arr = np.array(v, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"area {k + 1}: gain {name} has non-finite entries")
            vals[name] = arr
        areas.append(AreaGains(**vals))
    spec = DesignSpec.from_dict(d["spec"]) if d.get("spec") else None
    return GainSet(areas, d.get("strategy", "integrated"), spec, dict(d.get("meta", {})))


def save_gains(g: GainSet, path):
    dump_json(gains_to_dict(g), path)


def load_gains(path) -> GainSet:
    d = read_json(path, "gains")
    try:
        return gains_from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: malformed gains: {exc}") from exc


def certificate_dict(solutions, layout_names=None):
    sols = solutions if isinstance(solutions, list) else [solutions]
    return {
        "kind": "certificate",
        "format_version": FORMAT_VERSION,
        "feasible": all(s.feasible for s in sols),
        "problems": [{
            "feasible": s.feasible,
            "scaled_margin": s.scaled_margin,
            "margin": s.margin,
            "blocking": s.blocking,
            "residuals": s.residuals,
            "diagnostics": s.diagnostics,
            "x": s.x,
        } for s in sols],
    }


def verification_dict(rep, config_source=""):
    d = {
        "kind": "verification",
        "format_version": FORMAT_VERSION,
        "config": config_source,
        "passed": rep.passed,
        "flags": rep.flags,
        "failing": rep.failing(),
        "gamma": rep.gamma,
        "hinf_lower_bound": rep.hinf,
        "hinf_peak_frequency": rep.hinf_freq,
        "hinf_physical": rep.hinf_physical,
        "analysis_residual": rep.analysis_residual,
        "decoupling_residual": rep.decoupling_residual,
        "max_real_closed_loop": float(np.max(rep.spectrum.real)),
        "max_real_physical": float(np.max(rep.physical_spectrum.real)),
        "conserved_modes": rep.conserved_modes,
        "notes": rep.notes,
    }
    if rep.strips is not None:
        d["strips"] = {
            "control": {"strip": rep.strips["control"]["strip"],
                        "passed": rep.strips["control"]["passed"],
                        "outside": [[float(z.real), float(z.imag)] for z, ok in
                                    zip(rep.strips["control"]["eigenvalues"],
                                        rep.strips["control"]["inside"]) if not ok]},
            "observer": {"strips": rep.strips["observer"]["strips"],
                         "passed": rep.strips["observer"]["passed"],
                         "outside": [[float(z.real), float(z.imag), lab] for z, ok, lab in
                                     zip(rep.strips["observer"]["eigenvalues"],
                                         rep.strips["observer"]["inside"],
                                         rep.strips["observer"]["labels"]) if not ok]},
        }
    return d


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# format-version: {FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_eigen_csv(rows, path):
    _write_csv(path, ["re", "im", "block"], rows)


def write_trajectory_csv(traj, path):
    sig = traj.signals()
    names = list(sig)
    cols = [traj.time] + [sig[k] for k in names]
    data = np.column_stack(cols)
    _write_csv(path, ["time"] + names, data.tolist())


def read_csv(path):
    """``(header, float array)`` of a versioned CSV written by this module."""
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# format-version: {FORMAT_VERSION}":
            raise FormatError(f"{path}: missing or unsupported format-version line")
        r = csv.reader(fh)
        header = next(r)
        rows = [row for row in r]
    return header, rows


def write_plot_script(csv_name, n_areas, path, title=""):
    """gnuplot script plotting frequency and tie-line deviations."""
    lines = [
        "# format-version: 1",
        "# gnuplot script; run with: gnuplot -p " + Path(path).name,
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        "set xlabel 'time (s)'",
        "set grid",
        "set multiplot layout 2,1 title '" + title.replace("'", "") + "'",
        "set ylabel 'df (Hz)'",
        "plot " + ", ".join(f"'{csv_name}' using 'time':'df_{i}' with lines"
                            for i in range(1, n_areas + 1)),
        "set ylabel 'dPtie (p.u.)'",
        "plot " + ", ".join(f"'{csv_name}' using 'time':'dPtie_{i}' with lines"
                            for i in range(1, n_areas + 1)),
        "unset multiplot",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def metrics_table(named):
    """Side-by-side text table for ``{label: metrics dict}``."""
    labels = list(named)
    signals = list(next(iter(named.values())))
    head = f"{'signal':<10} {'metric':<14}" + "".join(f" {l:>22}" for l in labels)
    out = [head, "-" * len(head)]
    for s in signals:
        for m in ("peak", "settling_time", "ise"):
            out.append(f"{s:<10} {m:<14}" + "".join(f" {named[l][s][m]:>22.10g}" for l in labels))
    return "\n".join(out)
