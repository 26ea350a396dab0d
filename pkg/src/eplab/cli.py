"""Command line front end: synthesize datasets, fit them, analyze the plane.

Subcommands
  synth          write spectrum CSVs (plus sidecars and a manifest) on a grid
  fit            fit spectra to the two-level model; JSON per file, CSV summary
  analyze scan   tabulate the effective matrix over a parameter grid
  analyze ep     locate the eigenvalue degeneracy on a scan or fit summary
  analyze curve  trace the real-splitting contour through the plane
  analyze pt     run the symmetry normal-form chain along a traced curve
  analyze braid  track eigenvalue exchange around a closed parameter loop

Exit codes are stable: 0 success, 1 usage error, 2 data error, 3 numerical
failure. Every output file embeds a 16-hex-digit hash of the resolved
configuration, and re-running a command with the same configuration and seed
rewrites outputs bit-identically. EPLAB_OUTPUT_ROOT sets the default output
directory; an explicit --out wins, and the directory must already exist.
"""

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys

import numpy as np

from .core import eigenvalues_sorted, pt_report, radicand
from .epscan import (
    CurveTrace,
    ParamGrid,
    ScanResult,
    SpectrumDirectory,
    braid_loop,
    locate_ep,
    scan,
    trace_pt_curve,
)
from .errors import (
    DataError,
    EplabError,
    InvalidArgumentError,
    OutOfBoundsError,
    UsageError,
)
from .fit import FitConfig, fit_spectrum
from .synth import NoiseSpec, load_family, read_spectrum, synth_spectrum

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

OUTPUT_ROOT_ENV = "EPLAB_OUTPUT_ROOT"

MANIFEST_SCHEMA = "eplab.manifest.v1"
FIT_SCHEMA = "eplab.fit.v1"
EP_SCHEMA = "eplab.ep.v1"
PT_SCHEMA = "eplab.pt.v1"
CURVE_CSV_SCHEMA = "eplab.curvecsv.v1"
PT_CSV_SCHEMA = "eplab.ptcsv.v1"


class _Parser(argparse.ArgumentParser):
    """argparse that reports problems as UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------- plumbing


def _config_hash(resolved):
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _merge_config_file(ns, allowed):
    """Fill unset options from the JSON config file; flags win."""
    if ns.config is None:
        return
    try:
        with open(ns.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file {ns.config!r}: {exc}")
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {ns.config!r} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise DataError(f"config file {ns.config!r} must hold a JSON object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in doc.items():
        if getattr(ns, key, None) is None:
            setattr(ns, key, value)


def _resolve_out(ns):
    out = ns.out or os.environ.get(OUTPUT_ROOT_ENV) or "."
    if not os.path.isdir(out):
        raise DataError(f"output directory {out!r} does not exist")
    return out


def _parse_grid(text):
    axes = str(text).split("x")
    if len(axes) != 2:
        raise UsageError(
            f"grid must be min:max:step x min:max:step, got {text!r}")
    spans = []
    for axis in axes:
        parts = axis.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid axis must be min:max:step, got {axis!r}")
        try:
            spans.append(tuple(float(p) for p in parts))
        except ValueError:
            raise UsageError(f"grid axis {axis!r} is not numeric")
    if spans[0][2] != spans[1][2]:
        raise UsageError("both grid axes must use the same step")
    return ParamGrid(spans[0][0], spans[0][1],
                     spans[1][0], spans[1][1], spans[0][2])


def _parse_point(text, what="point"):
    parts = str(text).split(",")
    if len(parts) != 2:
        raise UsageError(f"{what} must be s,delta (mm), got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"{what} {text!r} is not numeric")


def _parse_mask(text):
    if text is None:
        return None
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_json(path, doc):
    _write_text(path, json.dumps(doc, indent=2) + "\n")


def _write_manifest(out, command, cfg_hash, seed, files):
    doc = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "config_hash": cfg_hash,
        "seed": seed,
        "files": sorted(files),
    }
    _write_json(os.path.join(out, "manifest.json"), doc)


def _pool_map(fn, items, jobs):
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (4 * jobs))
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _grid_from_points(points):
    """Infer the ParamGrid spanned by (s, delta) pairs; must be regular."""
    ss = sorted({round(float(s), 6) for s, _ in points})
    dd = sorted({round(float(d), 6) for _, d in points})

    def axis_step(values):
        if len(values) < 2:
            return None
        return float(np.min(np.diff(values)))

    steps = [st for st in (axis_step(ss), axis_step(dd)) if st is not None]
    step = min(steps) if steps else 0.01
    grid = ParamGrid(ss[0], ss[-1], dd[0], dd[-1], step)
    nodes_s = set(np.round(grid.s_values, 6))
    nodes_d = set(np.round(grid.delta_values, 6))
    if not (set(ss) <= nodes_s and set(dd) <= nodes_d):
        raise DataError("spectrum coordinates do not form a regular grid")
    return grid


# ------------------------------------------------------------------- synth


def _point_seed(base, index):
    # collision-free per-point derivation: streams never overlap between
    # base seeds, and --jobs reordering cannot change any file's samples
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def _synth_task(args):
    fam, s, d, f0, span, fstep, sigma, seed, cfg_hash, out = args
    noise = NoiseSpec(sigma=sigma, seed=seed) if sigma > 0 else None
    spec = synth_spectrum(
        fam.internal_at(s, d), fam.coupling, f0, span, fstep, noise=noise,
        meta={"s_mm": s, "delta_mm": d, "B_mT": fam.b_mt,
              "seed": seed, "sigma": sigma, "config_hash": cfg_hash})
    name = f"{fam.name}_s{s:.4f}_d{d:.4f}.csv"
    spec.write_csv(os.path.join(out, name))
    return name


def _cmd_synth(ns):
    _merge_config_file(ns, ("family", "grid", "point", "sigma", "seed",
                            "f0", "span", "fstep", "out", "jobs"))
    if ns.family is None:
        raise UsageError("synth requires --family")
    if (ns.grid is None) == (ns.point is None):
        raise UsageError("synth requires exactly one of --grid or --point")

    fam = load_family(ns.family)
    defaults = fam.spectrum_defaults
    f0 = ns.f0 if ns.f0 is not None else defaults["f_center_mhz"]
    span = ns.span if ns.span is not None else defaults["span_mhz"]
    fstep = ns.fstep if ns.fstep is not None else defaults["step_mhz"]
    sigma = float(ns.sigma) if ns.sigma is not None else 0.0
    seed = int(ns.seed) if ns.seed is not None else 0
    out = _resolve_out(ns)

    if ns.grid is not None:
        grid = _parse_grid(ns.grid)
        points = [(s, d) for s in grid.s_values for d in grid.delta_values]
    else:
        points = [_parse_point(ns.point)]
    for s, d in points:
        if not fam.contains(s, d):
            raise OutOfBoundsError(
                f"point ({s:g}, {d:g}) outside family bounds "
                f"s in {fam.bounds_s}, delta in {fam.bounds_delta}")

    resolved = {"command": "synth", "family": fam.name,
                "grid": ns.grid, "point": ns.point, "sigma": sigma,
                "seed": seed, "f0": f0, "span": span, "fstep": fstep,
                "out": out}
    cfg_hash = _config_hash(resolved)

    tasks = [(fam, s, d, f0, span, fstep, sigma, _point_seed(seed, k),
              cfg_hash, out)
             for k, (s, d) in enumerate(points)]
    files = _pool_map(_synth_task, tasks, ns.jobs)
    sidecars = [os.path.splitext(f)[0] + ".json" for f in files]
    _write_manifest(out, "synth", cfg_hash, seed, files + sidecars)
    print(f"wrote {len(files)} spectra to {out} "
          f"(sigma={sigma:g}, seed={seed}, config={cfg_hash})")
    return EXIT_OK


# --------------------------------------------------------------------- fit


def _spectrum_inputs(ns):
    """Normalize --in / --manifest / positional files to (s, d, path)."""
    given = sum(bool(x) for x in (ns.spectra, ns.indir, ns.manifest))
    if given == 0:
        raise UsageError("fit requires spectra: files, --in DIR, or "
                         "--manifest FILE")
    if given > 1:
        raise UsageError("give spectra as files, --in, or --manifest, "
                         "not several at once")

    if ns.indir:
        return SpectrumDirectory(ns.indir).points()

    if ns.manifest:
        try:
            with open(ns.manifest, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read manifest {ns.manifest!r}: {exc}")
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest {ns.manifest!r} is not valid JSON: "
                            f"{exc}")
        names = [n for n in doc.get("files", []) if n.endswith(".csv")]
        if not names:
            raise DataError(f"manifest {ns.manifest!r} lists no CSV files")
        root = os.path.dirname(os.path.abspath(ns.manifest))
        paths = [os.path.join(root, n) for n in names]
    else:
        paths = list(ns.spectra)

    points = []
    seen = {}
    for path in paths:
        sidecar = os.path.splitext(path)[0] + ".json"
        try:
            with open(sidecar, encoding="utf-8") as fh:
                meta = json.load(fh)
            s = float(meta["s_mm"])
            d = float(meta["delta_mm"])
        except (OSError, ValueError, TypeError, KeyError):
            raise DataError(
                f"{path}: no sidecar with s_mm/delta_mm coordinates")
        key = (round(s, 6), round(d, 6))
        if key in seen:
            raise DataError(f"{path}: duplicates coordinates of {seen[key]}")
        seen[key] = path
        points.append((s, d, path))
    return sorted(points)


def _fit_task(args):
    s, d, path, mask, cfg = args
    name = os.path.basename(path)
    try:
        spec = read_spectrum(path)
        res = fit_spectrum(spec, cfg, mask=mask)
    except EplabError as exc:
        return {"name": name, "s": s, "d": d, "ok": False,
                "reason": type(exc).__name__, "detail": str(exc)}
    pair = eigenvalues_sorted(res.ham)
    rad = radicand(res.ham)
    return {
        "name": name, "s": s, "d": d, "ok": True,
        "row": (pair[0].real, -2.0 * pair[0].imag,
                pair[1].real, -2.0 * pair[1].imag,
                rad.reh2, rad.imh2, rad.cross, res.tau),
        "ham": (res.ham.e1, res.ham.e2, res.ham.h1, res.ham.h2),
        "doc": res.to_json_dict(),
    }


def _cmd_fit(ns):
    _merge_config_file(ns, ("indir", "manifest", "mask", "n_starts", "seed",
                            "max_failures", "out", "jobs"))
    inputs = _spectrum_inputs(ns)
    mask = _parse_mask(ns.mask)
    cfg = FitConfig(
        n_starts=int(ns.n_starts) if ns.n_starts is not None else 8,
        seed=int(ns.seed) if ns.seed is not None else 0)
    max_failures = (float(ns.max_failures)
                    if ns.max_failures is not None else 0.2)
    out = _resolve_out(ns)
    grid = _grid_from_points([(s, d) for s, d, _ in inputs])

    resolved = {"command": "fit",
                "inputs": [os.path.basename(p) for _, _, p in inputs],
                "mask": list(mask) if mask else None,
                "n_starts": cfg.n_starts, "seed": cfg.seed,
                "max_failures": max_failures, "out": out}
    cfg_hash = _config_hash(resolved)

    results = _pool_map(_fit_task,
                        [(s, d, p, mask, cfg) for s, d, p in inputs],
                        ns.jobs)

    shape = grid.shape
    cols = {k: np.full(shape, np.nan) for k in
            ("f1", "g1", "f2", "g2", "reh2", "imh2", "cross", "tau")}
    mats = {k: np.full(shape, np.nan, dtype=complex) for k in
            ("e1", "e2", "h1", "h2")}
    ok = np.zeros(shape, dtype=bool)
    reasons = {}
    node_s = {round(v, 6): i for i, v in enumerate(grid.s_values)}
    node_d = {round(v, 6): j for j, v in enumerate(grid.delta_values)}
    for i in range(shape[0]):
        for j in range(shape[1]):
            reasons[(i, j)] = "missing-spectrum"

    files = []
    n_failed_fits = 0
    for res in results:
        i = node_s[round(res["s"], 6)]
        j = node_d[round(res["d"], 6)]
        del reasons[(i, j)]
        if not res["ok"]:
            n_failed_fits += 1
            reasons[(i, j)] = res["reason"]
            continue
        ok[i, j] = True
        for name, value in zip(cols, res["row"]):
            cols[name][i, j] = value
        for name, value in zip(mats, res["ham"]):
            mats[name][i, j] = value
        doc = {"schema": FIT_SCHEMA, "config_hash": cfg_hash,
               "source": res["name"],
               "s_mm": res["s"], "delta_mm": res["d"], **res["doc"]}
        fit_name = os.path.splitext(res["name"])[0] + "_fit.json"
        _write_json(os.path.join(out, fit_name), doc)
        files.append(fit_name)

    summary = ScanResult(grid=grid, provenance="fit", ok=ok, reasons=reasons,
                         **cols, **mats)
    summary.write_csv(os.path.join(out, "summary.csv"), config_hash=cfg_hash)
    files.append("summary.csv")
    _write_manifest(out, "fit", cfg_hash, cfg.seed, files)

    rate = n_failed_fits / len(inputs)
    print(f"fitted {len(inputs)} spectra, {n_failed_fits} failures "
          f"(rate {rate:.3f}); wrote summary.csv (config={cfg_hash})")
    if rate > max_failures:
        print(f"failure rate {rate:.3f} exceeds threshold {max_failures:g}")
        return EXIT_NUMERICAL
    return EXIT_OK


# ----------------------------------------------------------------- analyze


def _scan_source(ns, require_family=False):
    """Resolve --family/--in into a scan-ready (source, grid) pair."""
    if ns.family and getattr(ns, "indir", None):
        raise UsageError("give --family or --in, not both")
    if ns.family:
        fam = load_family(ns.family)
        if getattr(ns, "grid", None):
            grid = _parse_grid(ns.grid)
        else:
            grid = ParamGrid(fam.bounds_s[0], fam.bounds_s[1],
                             fam.bounds_delta[0], fam.bounds_delta[1])
        return fam, grid
    if require_family:
        raise UsageError("this command requires --family")
    if getattr(ns, "indir", None):
        directory = SpectrumDirectory(ns.indir)
        grid = _grid_from_points([(s, d) for s, d, _ in directory.points()])
        return directory, grid
    raise UsageError("requires a source: --family or --in")


def _cmd_analyze_scan(ns):
    _merge_config_file(ns, ("family", "indir", "grid", "out"))
    source, grid = _scan_source(ns)
    out = _resolve_out(ns)
    resolved = {"command": "analyze-scan", "family": ns.family,
                "in": ns.indir, "grid": ns.grid, "out": out}
    cfg_hash = _config_hash(resolved)

    result = scan(grid, source)
    result.write_csv(os.path.join(out, "scan.csv"), config_hash=cfg_hash)
    print(f"scanned {grid.shape[0]}x{grid.shape[1]} grid, "
          f"{result.n_failed} failed points; wrote scan.csv "
          f"(config={cfg_hash})")
    return EXIT_OK


def _cmd_analyze_ep(ns):
    _merge_config_file(ns, ("infile", "out"))
    if ns.infile is None:
        raise UsageError("analyze ep requires --in CSV")
    result = ScanResult.read_csv(ns.infile)
    loc = locate_ep(result)
    out = _resolve_out(ns)
    resolved = {"command": "analyze-ep", "in": ns.infile, "out": out}
    cfg_hash = _config_hash(resolved)
    doc = {"schema": EP_SCHEMA, "config_hash": cfg_hash,
           "source": os.path.basename(ns.infile),
           "s_mm": loc.s, "delta_mm": loc.delta,
           "offset_s": loc.offset_s, "offset_delta": loc.offset_delta,
           "uncertainty_mm": loc.uncertainty}
    _write_json(os.path.join(out, "ep.json"), doc)
    print(f"EP at s={loc.s:.6f} mm, delta={loc.delta:.6f} mm "
          f"(uncertainty {loc.uncertainty:g} mm)")
    return EXIT_OK


def _write_curve_csv(path, trace, cfg_hash):
    lines = [f"# schema={CURVE_CSV_SCHEMA}", f"# config_hash={cfg_hash}",
             "s_mm,delta_mm,reh2,imh2,cross,tau,d_re,d_im,"
             "reh2_norm,imh2_norm,cross_norm"]
    for k in range(trace.n_points):
        norm = trace.h1_abs_sq[k]
        if np.isfinite(norm) and norm > 0.0:
            scaled = (trace.reh2[k] / norm, trace.imh2[k] / norm,
                      trace.cross[k] / norm)
        else:
            scaled = (np.nan, np.nan, np.nan)
        vals = (trace.points[k, 0], trace.points[k, 1],
                trace.reh2[k], trace.imh2[k], trace.cross[k], trace.tau[k],
                trace.d[k].real, trace.d[k].imag, *scaled)
        lines.append(",".join("%.17g" % v for v in vals))
    _write_text(path, "\n".join(lines) + "\n")


def _cmd_analyze_curve(ns):
    _merge_config_file(ns, ("family", "indir", "grid", "start",
                            "epsilon", "cstep", "out"))
    out = _resolve_out(ns)
    if ns.family:
        source, grid = _scan_source(ns)
        result = scan(grid, source)
        origin = {"family": ns.family, "grid": ns.grid}
    elif ns.indir:
        result = ScanResult.read_csv(ns.indir)
        origin = {"scan": os.path.basename(ns.indir)}
    else:
        raise UsageError("analyze curve requires --family or --in SCAN.csv")

    start_text = ns.start if ns.start is not None else "ep"
    if str(start_text).strip().lower() == "ep":
        # snap to the grid node: the refined location can sit a few 1e-6
        # off the contour, which the trace tolerance would reject
        loc = locate_ep(result)
        g = result.grid
        i = int(np.clip(round((loc.s - g.s_min) / g.step), 0, g.n_s - 1))
        j = int(np.clip(round((loc.delta - g.delta_min) / g.step),
                        0, g.n_delta - 1))
        start = (g.s_values[i], g.delta_values[j])
    else:
        start = _parse_point(start_text, what="--start")

    resolved = {"command": "analyze-curve", "source": origin,
                "start": ns.start, "epsilon": ns.epsilon,
                "step": ns.cstep, "out": out}
    cfg_hash = _config_hash(resolved)

    trace = trace_pt_curve(result, start, epsilon=ns.epsilon, step=ns.cstep)
    doc = trace.to_json_dict(source=origin, config_hash=cfg_hash)
    _write_json(os.path.join(out, "trace.json"), doc)
    _write_curve_csv(os.path.join(out, "curve.csv"), trace, cfg_hash)
    flag = " (truncated)" if trace.truncated else ""
    print(f"traced {trace.n_points} points, crossing at index "
          f"{trace.crossing_index}{flag}; wrote trace.json, curve.csv "
          f"(config={cfg_hash})")
    return EXIT_OK


def _cmd_analyze_pt(ns):
    _merge_config_file(ns, ("curve", "out"))
    if ns.curve is None:
        raise UsageError("analyze pt requires --curve TRACE.json")
    try:
        with open(ns.curve, encoding="utf-8") as fh:
            trace = CurveTrace.from_json_dict(json.load(fh))
    except OSError as exc:
        raise DataError(f"cannot read curve {ns.curve!r}: {exc}")
    except json.JSONDecodeError as exc:
        raise DataError(f"curve {ns.curve!r} is not valid JSON: {exc}")
    if trace.hams is None:
        raise DataError(
            "trace carries no matrices; re-trace from a family or a scan "
            "with full matrix columns")

    out = _resolve_out(ns)
    resolved = {"command": "analyze-pt", "curve": ns.curve, "out": out}
    cfg_hash = _config_hash(resolved)

    rows = []
    phases = []
    for k, ham in enumerate(trace.hams):
        rep = pt_report(ham)
        rad = radicand(ham)
        phase = "exact" if rad.reh2 >= rad.imh2 else "broken"
        phases.append(phase)
        rows.append({"index": k,
                     "s_mm": trace.points[k, 0],
                     "delta_mm": trace.points[k, 1],
                     "tau": rep.tau, "phase": phase,
                     "residual": rep.form.residual,
                     "commutator_norm": rep.commutator_norm})
    flips = [k for k in range(1, len(phases)) if phases[k] != phases[k - 1]]
    max_residual = max(r["residual"] for r in rows)
    max_commutator = max(r["commutator_norm"] for r in rows)

    doc = {"schema": PT_SCHEMA, "config_hash": cfg_hash,
           "source": os.path.basename(ns.curve),
           "n_points": len(rows), "crossing_index": trace.crossing_index,
           "phase_flips": flips, "max_residual": max_residual,
           "max_commutator_norm": max_commutator, "points": rows}
    _write_json(os.path.join(out, "pt.json"), doc)

    lines = [f"# schema={PT_CSV_SCHEMA}", f"# config_hash={cfg_hash}",
             "index,s_mm,delta_mm,tau,phase,residual,commutator_norm"]
    for r in rows:
        lines.append(",".join((
            str(r["index"]), "%.17g" % r["s_mm"], "%.17g" % r["delta_mm"],
            "%.17g" % r["tau"], r["phase"],
            "%.17g" % r["residual"], "%.17g" % r["commutator_norm"])))
    _write_text(os.path.join(out, "pt.csv"), "\n".join(lines) + "\n")

    flip_txt = ", ".join(str(k) for k in flips) if flips else "never"
    print(f"{len(rows)} points: phase flips at index {flip_txt} "
          f"(curve crossing index {trace.crossing_index}); "
          f"max residual {max_residual:.3g}, "
          f"max commutator {max_commutator:.3g}")
    return EXIT_OK


def _cmd_analyze_braid(ns):
    _merge_config_file(ns, ("family", "center", "radius", "points",
                            "turns", "out"))
    fam, grid = _scan_source(ns, require_family=True)
    out = _resolve_out(ns)
    radius = float(ns.radius) if ns.radius is not None else 0.1
    n_points = int(ns.points) if ns.points is not None else 64
    turns = int(ns.turns) if ns.turns is not None else 1

    center_text = ns.center if ns.center is not None else "ep"
    if str(center_text).strip().lower() == "ep":
        loc = locate_ep(scan(grid, fam))
        center = (loc.s, loc.delta)
    else:
        center = _parse_point(center_text, what="--center")

    resolved = {"command": "analyze-braid", "family": fam.name,
                "center": ns.center, "radius": radius,
                "points": n_points, "turns": turns, "out": out}
    cfg_hash = _config_hash(resolved)

    trace = braid_loop(fam, center, radius, n_points=n_points, turns=turns)
    doc = trace.to_json_dict(config_hash=cfg_hash)
    doc["center"] = [center[0], center[1]]
    doc["radius"] = radius
    doc["turns"] = turns
    _write_json(os.path.join(out, "braid.json"), doc)
    print(f"permutation: {trace.permutation.value} "
          f"(center {center[0]:.4f},{center[1]:.4f}, radius {radius:g}, "
          f"turns {turns})")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_common(parser):
    parser.add_argument("--out", help="output directory (must exist)")
    parser.add_argument("--config", help="JSON config file; flags win")


def _build_parser():
    top = _Parser(prog="eplab", description=__doc__.splitlines()[0])
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize spectrum datasets")
    p.add_argument("--family", help="preset name (b38, b0) or JSON path")
    p.add_argument("--grid", help="min:max:step x min:max:step in mm")
    p.add_argument("--point", help="single s,delta point in mm")
    p.add_argument("--sigma", type=float, help="noise level (default 0)")
    p.add_argument("--seed", type=int, help="base RNG seed (default 0)")
    p.add_argument("--f0", type=float, help="center frequency MHz")
    p.add_argument("--span", type=float, help="frequency span MHz")
    p.add_argument("--fstep", type=float, help="frequency step MHz")
    p.add_argument("--jobs", type=int, help="worker processes")
    _add_common(p)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("fit", help="fit spectra to the two-level model")
    p.add_argument("spectra", nargs="*", help="spectrum CSV files")
    p.add_argument("--in", dest="indir", help="directory of spectra")
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--mask", help="channels to fit, e.g. S11 or S11,S22")
    p.add_argument("--n-starts", type=int, help="restarts per fit (default 8)")
    p.add_argument("--seed", type=int, help="fit RNG seed (default 0)")
    p.add_argument("--max-failures", type=float,
                   help="acceptable failure fraction (default 0.2)")
    p.add_argument("--jobs", type=int, help="worker processes")
    _add_common(p)
    p.set_defaults(handler=_cmd_fit)

    pa = sub.add_parser("analyze", help="plane analysis on fits or presets")
    mode = pa.add_subparsers(dest="mode", required=True)

    p = mode.add_parser("scan", help="tabulate the plane on a grid")
    p.add_argument("--family", help="preset name or JSON path")
    p.add_argument("--in", dest="indir", help="directory of spectra to fit")
    p.add_argument("--grid", help="min:max:step x min:max:step in mm")
    _add_common(p)
    p.set_defaults(handler=_cmd_analyze_scan)

    p = mode.add_parser("ep", help="locate the degeneracy on a scan CSV")
    p.add_argument("--in", dest="infile", help="scan or fit-summary CSV")
    _add_common(p)
    p.set_defaults(handler=_cmd_analyze_ep)

    p = mode.add_parser("curve", help="trace the real-splitting contour")
    p.add_argument("--family", help="preset name or JSON path")
    p.add_argument("--in", dest="indir", help="scan CSV to trace on")
    p.add_argument("--grid", help="grid when scanning a family")
    p.add_argument("--start", help="s,delta start point or 'ep' (default)")
    p.add_argument("--epsilon", type=float, help="contour tolerance")
    p.add_argument("--cstep", type=float, help="marching step in mm")
    _add_common(p)
    p.set_defaults(handler=_cmd_analyze_curve)

    p = mode.add_parser("pt", help="symmetry analysis along a traced curve")
    p.add_argument("--curve", help="trace.json from analyze curve")
    _add_common(p)
    p.set_defaults(handler=_cmd_analyze_pt)

    p = mode.add_parser("braid", help="eigenvalue exchange around a loop")
    p.add_argument("--family", help="preset name or JSON path")
    p.add_argument("--center", help="loop center s,delta or 'ep' (default)")
    p.add_argument("--radius", type=float, help="loop radius mm (default 0.1)")
    p.add_argument("--points", type=int, help="loop samples (default 64)")
    p.add_argument("--turns", type=int, help="windings (default 1)")
    p.add_argument("--grid", help="grid for locating the center")
    _add_common(p)
    p.set_defaults(handler=_cmd_analyze_braid)

    return top


def main(argv=None):
    try:
        ns = _build_parser().parse_args(argv)
        return ns.handler(ns)
    except SystemExit as exc:          # argparse --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (UsageError, InvalidArgumentError, OutOfBoundsError) as exc:
        print(f"eplab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"eplab: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EplabError as exc:
        print(f"eplab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
