"""Command-line front end.

Usage::

    chirpdnp {chirp,ise,epr-line,ase,scan,validate} --config run.json [--out DIR]
             [--dt US] [--t2 US] [--seed N] [--stride N]

Exit codes: 0 success, 1 invalid input (bad config or unphysical
parameters), 2 step refinement failed to converge. ``manifest.json`` is
written to the output directory for every run, including failed ones;
other artifacts of a failed run are removed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import traceback
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import RunConfig, dump_config, parse_config, with_overrides
from .errors import ChirpDNPError, ConvergenceFailure, ValidationError
from .experiments import (
    run_ase,
    run_chirp_single,
    run_epr_line,
    run_ise,
    scan_parameters,
    EprLine,
    ise_trajectory,
)
from .output import emit_gnuplot_data, write_json, write_table_csv, write_trajectory_csv

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE = 0, 1, 2
SUBCOMMANDS = ("chirp", "ise", "epr-line", "ase", "scan", "validate")


def _dt_used(cfg: RunConfig, duration: float) -> float:
    step = cfg.integrator.step_for(duration)
    return duration / max(1, math.ceil(duration / step - 1e-9))


def _params_header(cfg: RunConfig) -> dict:
    h = {"experiment": cfg.experiment, "version": __version__}
    h.update({f"pulse.{k}": v for k, v in cfg.to_dict()["pulse"].items()})
    if cfg.system is not None:
        h.update({f"system.{k}": v for k, v in cfg.to_dict()["system"].items() if v is not None})
    return h


def _refined(cfg: RunConfig, result: dict, probe) -> RunConfig:
    # for the batch drivers, pick dt from one representative converged run
    if not cfg.converge:
        return cfg
    traj = probe()
    result["halvings"] = traj.meta.get("halvings", 0)
    return replace(cfg, integrator=replace(cfg.integrator, dt=traj.dt))


def _do_chirp(cfg: RunConfig, out: dict):
    c = cfg.chirp
    traj = run_chirp_single(cfg.pulse, c.packets, c.initial, c.phi, cfg.integrator, converge=cfg.converge)
    out["dt_used"] = traj.dt
    out["halvings"] = traj.meta["halvings"]
    out["trajectory"] = traj
    out["summary"] = {
        "experiment": "chirp",
        "final": {k: traj.final(k) for k in traj.observables},
        "packets": traj.meta["packets"],
    }


def _do_ise(cfg: RunConfig, out: dict):
    traj, report = run_ise(cfg.pulse, cfg.system, cfg.integrator, converge=cfg.converge)
    out["dt_used"] = traj.dt
    out["halvings"] = traj.meta.get("halvings", 0)
    out["trajectory"] = traj
    out["summary"] = {
        "experiment": "ise",
        **report.to_dict(),
        "final": {k: traj.final(k) for k in traj.observables},
    }


def _do_epr(cfg: RunConfig, out: dict):
    line = cfg.line.build(cfg.pulse) if cfg.line is not None else EprLine.default_for(cfg.pulse)
    mid = float(line.offsets[len(line) // 2])
    cfg = _refined(cfg, out, lambda: ise_trajectory(cfg.pulse, cfg.system.with_packet(mid), cfg.integrator, converge=True))
    prof = run_epr_line(cfg.pulse, cfg.system, line, cfg.integrator, workers=cfg.workers)
    out["dt_used"] = _dt_used(cfg, cfg.pulse.duration)
    rows = [
        [float(o), float(w), float(i), float(s), c]
        for o, w, i, s, c in zip(prof.offsets, prof.weights, prof.iz_final, prof.sz_final, prof.classifications)
    ]
    out["tables"] = {"profile.csv": (("packet_offset", "weight", "iz_final", "sz_final", "classification"), rows)}
    out["summary"] = {
        "experiment": "epr-line",
        "n_packets": len(line),
        "aggregate": prof.aggregate,
        "packets": [dict(zip(("packet_offset", "weight", "iz_final", "sz_final", "classification"), r)) for r in rows],
        "errors": {repr(k): v for k, v in prof.errors.items()},
    }


def _do_ase(cfg: RunConfig, out: dict):
    cfg = _refined(cfg, out, lambda: ise_trajectory(cfg.pulse, cfg.system, cfg.integrator, converge=True))
    series = run_ase(cfg.pulse, cfg.system, cfg.ase.n_sweeps, cfg.integrator, delay=cfg.ase.delay)
    out["dt_used"] = _dt_used(cfg, cfg.pulse.duration)
    rows = [[i + 1, float(v)] for i, v in enumerate(series)]
    out["tables"] = {"buildup.csv": (("sweep", "iz"), rows)}
    incr = [float(series[0])] + [float(b - a) for a, b in zip(series[:-1], series[1:])]
    out["summary"] = {"experiment": "ase", "n_sweeps": len(series), "iz_after_sweep": series.tolist(), "increments": incr}


_SCAN_FIELDS = ("classification", "iz_after_dq", "iz_final", "zqx_at_zq", "zqy_at_zq", "predicted", "predictor_agrees")


def _do_scan(cfg: RunConfig, out: dict):
    cfg = _refined(cfg, out, lambda: ise_trajectory(cfg.pulse, cfg.system, cfg.integrator, converge=True))
    pts = scan_parameters(cfg.scan.grid, cfg.system, cfg.pulse, cfg.integrator, cfg.scan.dipolar_d, workers=cfg.workers)
    out["dt_used"] = _dt_used(cfg, cfg.pulse.duration) if "rate_k" not in cfg.scan.grid else None
    keys = list(cfg.scan.grid)
    rows, entries = [], []
    for p in pts:
        rep = p.report.to_dict() if p.report else {}
        rows.append([p.point[k] for k in keys] + [rep.get(f, "") for f in _SCAN_FIELDS] + [p.error or ""])
        entries.append({"point": p.point, "report": rep or None, "error": p.error})
    out["tables"] = {"scan.csv": (tuple(keys) + _SCAN_FIELDS + ("error",), rows)}
    counts = {c: sum(1 for p in pts if p.classification == c) for c in ("ISE", "DSE", "NONE", "ERROR")}
    out["summary"] = {"experiment": "scan", "n_points": len(pts), "counts": counts, "points": entries}


_DISPATCH = {"chirp": _do_chirp, "ise": _do_ise, "epr-line": _do_epr, "ase": _do_ase, "scan": _do_scan}


def _write_artifacts(cfg: RunConfig, res: dict, out_dir: Path, written: list):
    header = _params_header(cfg)
    if "trajectory" in res:
        written.append(write_trajectory_csv(res["trajectory"], out_dir / "trajectory.csv", header))
        written.append(emit_gnuplot_data(res["trajectory"], out_dir / "trajectory.dat", header))
    for name, (cols, rows) in res.get("tables", {}).items():
        written.append(write_table_csv(cols, rows, out_dir / name, header))
    written.append(write_json(res["summary"], out_dir / "summary.json"))


def run(cfg: RunConfig | None, out_dir, *, error: BaseException | None = None) -> int:
    """Execute ``cfg`` and write its artifacts plus ``manifest.json`` into ``out_dir``.

    ``cfg=None`` with ``error`` set records a failure that happened before
    the config could be built. Returns the process exit code.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": __version__,
        "config": cfg.to_dict() if cfg is not None else None,
        "dt_used": None,
        "halvings": None,
        "warnings": [],
        "artifacts": [],
    }
    written: list[Path] = []
    code, err = EXIT_OK, error
    t0 = time.perf_counter()
    if cfg is not None:
        res = {"halvings": 0}
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                _DISPATCH[cfg.experiment](cfg, res)
            manifest["warnings"] = [f"{w.category.__name__}: {w.message}" for w in caught]
            manifest["dt_used"] = res.get("dt_used")
            manifest["halvings"] = res.get("halvings")
            _write_artifacts(cfg, res, out_dir, written)
        except BaseException as exc:  # noqa: BLE001 - every failure gets a manifest
            err = exc
            for p in written:
                p.unlink(missing_ok=True)
            written = []
            if isinstance(exc, KeyboardInterrupt):
                _finish(manifest, out_dir, EXIT_INVALID, exc, t0, written)
                raise
    if err is not None:
        if isinstance(err, ConvergenceFailure):
            code = EXIT_CONVERGENCE
            manifest["last_values"] = err.last_values
        else:
            code = EXIT_INVALID
    _finish(manifest, out_dir, code, err, t0, written)
    return code


def _finish(manifest, out_dir, code, err, t0, written):
    manifest["wall_time_s"] = time.perf_counter() - t0
    manifest["status"] = "ok" if code == EXIT_OK else "error"
    manifest["exit_code"] = code
    manifest["error"] = None if err is None else f"{type(err).__name__}: {err}"
    if err is not None and not isinstance(err, ChirpDNPError):
        manifest["traceback"] = "".join(traceback.format_exception(err))
    manifest["artifacts"] = [p.name for p in written]
    write_json(manifest, out_dir / "manifest.json")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chirpdnp", description="Chirped-pulse solid-effect DNP simulations.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help="parse and validate only" if name == "validate" else f"run a {name} experiment")
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="chirpdnp-out", help="output directory (default: %(default)s)")
        p.add_argument("--dt", type=float, help="override the integrator step (us)")
        p.add_argument("--t2", type=float, help="override T2 (us)")
        p.add_argument("--seed", type=int, help="seed for a random EPR line")
        p.add_argument("--stride", type=int, help="record every N-th step")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        cfg = with_overrides(cfg, dt=args.dt, t2=args.t2, stride=args.stride, seed=args.seed)
        if args.command != "validate" and args.command != cfg.experiment:
            raise ValidationError("experiment", f"config is '{cfg.experiment}', subcommand is '{args.command}'")
    except ChirpDNPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.command != "validate":
            run(None, args.out, error=exc)
        return EXIT_INVALID

    if args.command == "validate":
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK

    code = run(cfg, args.out)
    manifest = json.loads((Path(args.out) / "manifest.json").read_text())
    if code:
        print(f"error: {manifest['error']}", file=sys.stderr)
    else:
        print(f"wrote {', '.join(manifest['artifacts'])} to {args.out}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
