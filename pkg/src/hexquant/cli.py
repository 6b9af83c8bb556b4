"""``hexquant`` command line: validate, sweep-eps, sweep-L, flow, render.

Configuration precedence is flags > ``--config`` JSON file > built-in
defaults.  Every run is determined by its configuration and seed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .continuum import energy_functional
from .discrete import (HEXAGON_ETA_THRESHOLD, ball_average, cells_to_csv, discrete_eta, quantization_energy,
                       voronoi_periodic)
from .errors import HexQuantError
from .flows import (ParticleState, PdeState, decay_report, jittered_lattice, load_checkpoint,
                    run_particle_flow, run_pde_flow, save_checkpoint)
from .lattice import (AREA_PI, HexLattice, field_from_dict, identity_field, random_fourier_field, sample_points,
                      trig_field, w1inf_norm)
from .render import diagram_svg
from .validation import DEFAULT_TOLS, MUTATIONS, run_battery

log = logging.getLogger("hexquant")

DEFAULTS = {
    "validate": {"seed": 0, "tol": [], "inject": None, "only": None, "json": None},
    "sweep-eps": {"field": "random", "eta": 0.02, "seed": 1, "ns": [4, 8, 16, 32], "m": 64,
                  "mode": "hexagon", "out": None, "field_file": None},
    "sweep-L": {"field": "random", "eta": 0.02, "seed": 1, "n": 8, "Ls": [5, 10, 20, 40],
                "samples": 1_000_000, "method": "montecarlo", "out": None, "field_file": None},
    "flow": {"kind": "pde", "n": 16, "m": 32, "eta": 0.02, "seed": 1, "field": "random", "T": 10.0,
             "variant": "F", "diff": "centered", "atol": 1e-7, "jitter": None, "init": "fourier",
             "max_steps": None, "dev_tol": 1e-4, "snapshots": [0], "outdir": "flow_out", "mode": "auto",
             "checkpoint_every": 0, "resume": None, "field_file": None},
    "render": {"field": "random", "eta": 0.02, "seed": 1, "n": 16, "mode": "hexagon", "out": "cells.svg",
               "csv": None, "field_file": None},
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hexquant", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON file with parameters for the subcommand")
    p.add_argument("--threads", type=int, default=None, help="thread count recorded in manifests")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    v = sub.add_parser("validate", help="run the property battery")
    v.add_argument("--seed", type=int, default=S)
    v.add_argument("--tol", action="append", default=S, metavar="NAME=VALUE", help="override a tolerance")
    v.add_argument("--inject", choices=sorted(MUTATIONS), default=S, help="inject a known defect")
    v.add_argument("--only", nargs="+", default=S, help="run checks whose name starts with these")
    v.add_argument("--json", default=S, help="also write the report here")
    v.add_argument("--list", action="store_true", help="list check names and default tolerances")

    def field_args(a):
        a.add_argument("--field", choices=["random", "trig", "identity", "file"], default=S)
        a.add_argument("--field-file", dest="field_file", default=S, help="JSON field descriptor")
        a.add_argument("--eta", type=float, default=S)
        a.add_argument("--seed", type=int, default=S)

    e = sub.add_parser("sweep-eps", help="Q / eps^2 against the continuum energy")
    field_args(e)
    e.add_argument("--ns", type=int, nargs="+", default=S)
    e.add_argument("--m", type=int, default=S)
    e.add_argument("--mode", choices=["hexagon", "general"], default=S)
    e.add_argument("--out", default=S)

    b = sub.add_parser("sweep-L", help="ball averages against the per-period integral")
    field_args(b)
    b.add_argument("--n", type=int, default=S)
    b.add_argument("--Ls", type=float, nargs="+", default=S)
    b.add_argument("--samples", type=int, default=S)
    b.add_argument("--method", choices=["montecarlo", "exact"], default=S)
    b.add_argument("--out", default=S)

    f = sub.add_parser("flow", help="run the particle or PDE gradient flow")
    f.add_argument("kind", nargs="?", choices=["particle", "pde"], default=None)
    field_args(f)
    f.add_argument("--n", type=int, default=S, help="particles per side")
    f.add_argument("--m", type=int, default=S, help="PDE grid size")
    f.add_argument("--T", type=float, default=S)
    f.add_argument("--variant", choices=["F", "F0", "G"], default=S)
    f.add_argument("--diff", choices=["centered", "spectral"], default=S)
    f.add_argument("--atol", type=float, default=S)
    f.add_argument("--init", choices=["fourier", "jitter"], default=S)
    f.add_argument("--jitter", type=float, default=S, help="particle offsets as a fraction of eps")
    f.add_argument("--max-steps", dest="max_steps", type=int, default=S)
    f.add_argument("--dev-tol", dest="dev_tol", type=float, default=S)
    f.add_argument("--mode", choices=["auto", "hexagon", "general"], default=S,
                   help="particle Voronoi mode; auto picks general when the start is too disordered")
    f.add_argument("--snapshots", type=int, nargs="*", default=S)
    f.add_argument("--outdir", default=S)
    f.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=S)
    f.add_argument("--resume", default=S, help="checkpoint prefix to continue from")

    r = sub.add_parser("render", help="SVG of the tessellation with an energy colour scale")
    field_args(r)
    r.add_argument("--n", type=int, default=S)
    r.add_argument("--mode", choices=["hexagon", "general"], default=S)
    r.add_argument("--out", default=S)
    r.add_argument("--csv", default=S, help="also write per-cell records")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config file and explicit flags (in increasing priority)."""
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        data = data.get(args.command, data)
        unknown = set(data) - set(cfg)
        if unknown:
            raise HexQuantError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        cfg.update(data)
    for k, v in vars(args).items():
        if k in cfg and not (k == "kind" and v is None):
            cfg[k] = v
    return cfg


def make_field(cfg):
    kind = cfg.get("field", "random")
    if kind == "random":
        return random_fourier_field(cfg["seed"], cfg["eta"])
    if kind == "trig":
        # unit-amplitude sine field scaled to ||Y||_{W^{1,inf}} = eta
        base = trig_field(1.0)
        return base.scaled(cfg["eta"] / w1inf_norm(base))
    if kind == "identity":
        return identity_field()
    if kind == "file":
        if not cfg.get("field_file"):
            raise HexQuantError("--field file needs --field-file")
        with open(cfg["field_file"]) as fh:
            return field_from_dict(json.load(fh))
    raise HexQuantError(f"unknown field {kind!r}")


def _emit_csv(rows, header, out):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


def _num(x):
    return repr(float(x))


# ---------------------------------------------------------------- commands


def cmd_validate(cfg, args) -> int:
    if getattr(args, "list", False):
        for name, tol in DEFAULT_TOLS.items():
            print(f"{name}\t{tol}")
        return 0
    tols = {}
    for item in cfg["tol"] or []:
        name, _, value = item.partition("=")
        if name not in DEFAULT_TOLS:
            raise HexQuantError(f"unknown check {name!r}")
        tols[name] = float(value)
    results = run_battery(tols, cfg["inject"], cfg["seed"], cfg["only"])
    failed = [r.name for r in results if not r.passed]
    report = {"passed": not failed, "failures": failed, "inject": cfg["inject"], "seed": cfg["seed"],
              "checks": [r.as_dict() for r in results]}
    text = json.dumps(report, indent=1, sort_keys=False, default=float)
    print(text)
    if cfg["json"]:
        with open(cfg["json"], "w") as fh:
            fh.write(text + "\n")
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
    return 0 if not failed else 1


SWEEP_EPS_HEADER = ["n", "eps [lattice units]", "Q [lattice units^4]", "Q/eps^2 [lattice units^2]",
                    "F(X) [lattice units^2]", "ratio |Pi| Q/(eps^2 F(X))", "status"]


def cmd_sweep_eps(cfg, args) -> int:
    X = make_field(cfg)
    try:
        fx = energy_functional(X, cfg["m"])
    except HexQuantError as exc:
        fx, fx_error = None, exc
    rows = []
    for n in cfg["ns"]:
        lat = HexLattice(n)
        eps = lat.epsilon
        try:
            if fx is None:
                raise fx_error
            q = quantization_energy(X, lat, cfg["mode"])
            rows.append([n, _num(eps), _num(q), _num(q / eps**2), _num(fx), _num(AREA_PI * q / (eps**2 * fx)), "ok"])
        except HexQuantError as exc:
            log.warning("n=%d: %s", n, exc)
            rows.append([n, _num(eps), "", "", "" if fx is None else _num(fx), "",
                         f"error: {type(exc).__name__}: {exc}"])
    _emit_csv(rows, SWEEP_EPS_HEADER, cfg["out"])
    return 0 if all(r[-1] == "ok" for r in rows) else 2


SWEEP_L_HEADER = ["L [lattice units]", "ball average [lattice units^2]", "stderr [lattice units^2]",
                  "Q/|Pi| [lattice units^2]", "Q [lattice units^4]", "relative gap (Q/|Pi|)",
                  "relative gap (Q)", "L*gap", "boundary cells", "samples"]


def cmd_sweep_l(cfg, args) -> int:
    X = make_field(cfg)
    lat = HexLattice(cfg["n"])
    rows = []
    for L in cfg["Ls"]:
        b = ball_average(X, lat, L, samples=cfg["samples"], seed=cfg["seed"], method=cfg["method"])
        if b.stderr > abs(b.value - b.per_area):
            log.warning("L=%g: Monte-Carlo error %.3g exceeds the gap %.3g", L, b.stderr, abs(b.value - b.per_area))
        rows.append([_num(L), _num(b.value), _num(b.stderr), _num(b.per_area), _num(b.per_period), _num(b.gap),
                     _num(b.gap_literal), _num(L * b.gap), b.boundary_cells, b.samples])
    _emit_csv(rows, SWEEP_L_HEADER, cfg["out"])
    return 0


def _manifest(cfg, args, extra=None):
    m = {"command": args.command, "config": cfg, "threads": args.threads, "version": __version__}
    m.update(extra or {})
    return m


def cmd_flow(cfg, args) -> int:
    out = cfg["outdir"]
    os.makedirs(out, exist_ok=True)
    trace = None
    if cfg["resume"]:
        state, trace, saved = load_checkpoint(cfg["resume"])
        # keep the stored configuration except for the run length controls given now
        keep = {k: cfg[k] for k in ("T", "max_steps", "outdir", "checkpoint_every", "snapshots", "resume")}
        cfg = dict(saved)
        cfg.update(keep)
        kind = cfg["kind"]
    else:
        kind = cfg["kind"]
        state = None
    ckpt = os.path.join(out, "checkpoint")
    every = cfg["checkpoint_every"]

    if kind == "particle":
        lat = HexLattice(cfg["n"])
        if state is None:
            if cfg["init"] == "jitter" or cfg["jitter"] is not None:
                pts = jittered_lattice(lat, cfg["jitter"] if cfg["jitter"] is not None else 0.1, cfg["seed"])
            else:
                pts = sample_points(make_field(cfg), lat)
            state = ParticleState(pts, lat)
        snaps = set(cfg["snapshots"] or [])
        mode = cfg.get("mode", "auto")
        if mode == "auto":
            mode = "hexagon" if discrete_eta(state.points, lat) < HEXAGON_ETA_THRESHOLD else "general"
        cfg["mode"] = mode  # resumed runs keep the mode they started with
        log.info("particle flow in %s mode", mode)

        def cb(st, tr):
            if st.step in snaps:
                d = voronoi_periodic(st.points, lat, "general")
                diagram_svg(d, out=os.path.join(out, f"snapshot_{st.step:05d}.svg"),
                            title=f"n={lat.n} step {st.step}")
            if every and st.step and st.step % every == 0:
                save_checkpoint(ckpt, st, tr, cfg)

        state, trace = run_particle_flow(state, max_steps=cfg["max_steps"] or 2000, dev_tol=cfg["dev_tol"],
                                         mode=mode, check_every=50 if mode == "hexagon" else 0,
                                         callback=cb, trace=trace)
        summary = {"stop_reason": trace.stop_reason, "steps": state.step, "energy": trace.energy[-1],
                   "identity_energy": 5 / (24 * np.sqrt(3)) * lat.epsilon**2, "max_deviation_eps": trace.linf[-1],
                   "mode": mode}
    else:
        if state is None:
            state = PdeState.from_field(make_field(cfg), cfg["m"])

        def cb(st, tr):
            if every and st.step and st.step % every == 0:
                save_checkpoint(ckpt, st, tr, cfg)

        state, trace = run_pde_flow(state, cfg["T"], cfg["variant"], cfg["diff"], atol=cfg["atol"],
                                    max_steps=cfg["max_steps"] or 1_000_000, callback=cb, trace=trace)
        summary = {"stop_reason": trace.stop_reason, "steps": state.step, "time": state.time,
                   "energy": trace.energy[-1], "linf": trace.linf[-1]}
        try:
            summary["decay"] = decay_report(trace).as_dict()
        except HexQuantError as exc:
            summary["decay"] = {"status": f"unavailable: {exc}"}
        np.savez(os.path.join(out, "final_state.npz"), values=state.values)
    trace.to_csv(os.path.join(out, "trace.csv"))
    save_checkpoint(ckpt, state, trace, cfg)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(_manifest(cfg, args, {"summary": summary}), fh, indent=1, default=float)
    print(json.dumps(summary, indent=1, default=float))
    return 0


def cmd_render(cfg, args) -> int:
    lat = HexLattice(cfg["n"])
    d = voronoi_periodic(sample_points(make_field(cfg), lat), lat, cfg["mode"])
    diagram_svg(d, out=cfg["out"], title=f"n={lat.n} eta={cfg['eta']}")
    if cfg["csv"]:
        cells_to_csv(d, cfg["csv"])
    return 0


COMMANDS = {"validate": cmd_validate, "sweep-eps": cmd_sweep_eps, "sweep-L": cmd_sweep_l,
            "flow": cmd_flow, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except HexQuantError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
