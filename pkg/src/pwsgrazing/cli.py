"""Command line: classify, simulate, maps, unfold and theorem1."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import expr as ex
from . import flow as fl
from . import maps, plot, scenarios, unfold
from .system import SystemFileError, decompose, load_system, system_to_text

EXIT_OK, EXIT_USAGE, EXIT_BOUND, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("pwsgrazing")


class UsageError(ValueError):
    pass


def _controls(args) -> fl.Controls:
    rtol, atol = args.tol if args.tol else (fl.DEFAULT.rtol, fl.DEFAULT.atol)
    if rtol <= 0 or atol <= 0:
        raise UsageError("tolerances must be positive")
    kw = dict(rtol=rtol, atol=atol)
    if args.max_arcs is not None:
        kw["max_arcs"] = args.max_arcs
    if args.max_time is not None:
        kw["max_time"] = args.max_time
    return fl.DEFAULT.with_(**kw)


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    if not os.access(args.out, os.W_OK):
        raise UsageError(f"output directory {args.out!r} is not writable")
    return args.out


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)


def _need_system(args):
    if not args.system:
        raise UsageError(f"--system FILE is required for {args.command}")
    return load_system(args.system)


# --------------------------------------------------------------------------- commands


def cmd_classify(args):
    sys_ = _need_system(args)
    out = _outdir(args)
    dec = decompose(sys_, None, args.grid)
    tans = []
    for t in dec.tangencies:
        if hasattr(t, "multiplicity"):
            tans.append({"x": t.x, "multiplicity": list(t.multiplicity), "kind": t.kind})
        else:
            tans.append({"x": t.x, "multiplicity": None, "kind": "both-vanish"})
    rep = {
        "system": args.system,
        "domain": list(sys_.domain),
        "regions": [{"a": r.x0, "b": r.x1, "type": r.label, "attracting": r.attracting} for r in dec.regions],
        "tangencies": tans,
    }
    _dump(os.path.join(out, "classify.json"), rep)
    print(f"{len(dec.regions)} regions, {len(tans)} tangencies -> {out}/classify.json")
    return EXIT_OK


def cmd_simulate(args):
    sys_ = _need_system(args)
    out = _outdir(args)
    if args.start is None:
        raise UsageError("--start X Y is required for simulate")
    ctl = _controls(args)
    orbit = fl.flow(sys_, tuple(args.start), 1, ctl)
    orbit.to_csv(os.path.join(out, "orbit.csv"))
    orbit.events_to_csv(os.path.join(out, "events.csv"))
    plot.phase_portrait(sys_, [orbit], os.path.join(out, "portrait.svg"), title=f"start {tuple(args.start)}")
    rep = {"status": orbit.status, "message": orbit.message, "arcs": len(orbit.arcs), "warnings": []}
    if orbit.status == fl.NON_UNIQUE:
        rep["warnings"].append("non-unique continuation: orbit truncated")
        log.warning("non-unique continuation: orbit truncated")
    loop = None
    try:
        loop = fl.detect_and_classify_loop(orbit, max(ctl.closure_tol, 1e3 * ctl.atol))
    except fl.AmbiguousClosure as exc:
        rep["warnings"].append(str(exc))
    if loop is not None:
        rep["loop"] = loop.summary()
        plot.loop_portrait(sys_, [loop], os.path.join(out, "loop.svg"), f"{loop.kind} loop")
    _dump(os.path.join(out, "simulate.json"), rep)
    print(f"{orbit.status}: {len(orbit.arcs)} arcs -> {out}")
    return EXIT_NUMERIC if orbit.status == fl.NUMERICAL else EXIT_OK


def _section(vals, half):
    if len(vals) != 4:
        raise UsageError("a section needs BX BY DX DY")
    return maps.Section((vals[0], vals[1]), (vals[2], vals[3]), half)


def cmd_maps(args):
    out = _outdir(args)
    ctl = _controls(args)
    if args.map == "transition":
        if args.system:
            if args.section0 is None or args.section1 is None:
                raise UsageError("transition sampling on a system needs --section0 and --section1")
            fld = load_system(args.system).upper
        else:
            # parabola calibration flow (1, -x)
            fld = scenarios.ExprField("1", "-x")
            args.section0 = args.section0 or [0.0, 0.0, 1.0, 0.0]
            args.section1 = args.section1 or [1.0, -0.5, 0.0, 1.0]
        s0 = _section(args.section0, args.half_width)
        s1 = _section(args.section1, args.half_width)
        rec = maps.transition_record(fld, s0, s1, controls=ctl)
        with open(os.path.join(out, "transition.csv"), "w") as fh:
            fh.write("r,V\n")
            for r, v in zip(rec.r, rec.V):
                fh.write(f"{r:.15g},{v:.15g}\n")
        _dump(os.path.join(out, "transition.json"), rec.as_dict())
        print(f"V2 fit {rec.v2_fit:.9f}, closed form {rec.v2_closed:.9f}")
        return EXIT_OK
    sys_ = _need_system(args)
    if args.interval is None:
        raise UsageError("--interval A B is required for the return map")
    rmap = maps.return_map(sys_, tuple(args.interval), args.n, ctl, jobs=args.jobs)
    rmap.to_csv(os.path.join(out, "return_map.csv"))
    try:
        fps, boundary = maps.find_fixed_points(rmap)
    except maps.DegenerateMap as exc:
        print(f"degenerate map: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _dump(
        os.path.join(out, "fixed_points.json"),
        {
            "fixed_points": [{"x": f.x, "stability": f.stability, "slope": f.slope} for f in fps],
            "boundary_candidates": [list(b) for b in boundary],
        },
    )
    print(f"{len(fps)} fixed points -> {out}")
    return EXIT_OK


def _load_params(args):
    if args.params:
        with open(args.params) as fh:
            return unfold.UnfoldingParams.from_json(fh.read())
    lam = args.lam or []
    return unfold.UnfoldingParams(args.alpha or 0.0, lam)


def cmd_unfold(args):
    out = _outdir(args)
    if args.sweep_delta is not None:
        return _distance_sweep(args, out)
    if args.system:
        base = unfold.NormalForm.from_system(load_system(args.system))
    else:
        base = scenarios.make_scenario(args.type, args.m, args.mu).normal_form
    params = _load_params(args)
    scenarios.require_zero_k(base.m, params)
    rep = unfold.check_admissible(params)
    if params.valid:
        b = params.breakpoints
        pad = 0.1 * (b[-1] - b[0])
        xs = np.linspace(b[0] - pad, b[-1] + pad, args.grid)
        tab = unfold.psi_table(xs, params)
        with open(os.path.join(out, "psi.csv"), "w") as fh:
            fh.write("x,psi,dpsi\n")
            for x, (s, sd) in zip(xs, tab):
                fh.write(f"{x:.15g},{s:.15g},{sd:.15g}\n")
    sys_ = unfold.build_unfolded(base, params)
    with open(os.path.join(out, "params.json"), "w") as fh:
        fh.write(params.to_json())
    _dump(os.path.join(out, "admissibility.json"), {"admissible": rep.admissible, "violations": rep.violations})
    dec = decompose(sys_, None, args.grid)
    _dump(
        os.path.join(out, "unfolded_classify.json"),
        {"tangencies": [{"x": t.x, "kind": getattr(t, "kind", "both-vanish")} for t in dec.tangencies]},
    )
    print(f"unfolded system: {len(dec.tangencies)} tangencies, admissible={rep.admissible} -> {out}")
    return EXIT_OK


def _distance_sweep(args, out):
    scn = scenarios.make_scenario(args.type, args.m, args.mu)
    rows = scenarios.distance_sweep(scn, args.sweep_delta, args.halvings, grid_n=args.grid)
    with open(os.path.join(out, "distance.csv"), "w") as fh:
        fh.write("delta,rho\n")
        for d, r in rows:
            fh.write(f"{d:.15g},{r:.15g}\n")
    mono = all(b[1] < a[1] for a, b in zip(rows, rows[1:]))
    print(f"distance sweep monotone={mono}, final rho={rows[-1][1]:.3e}")
    return EXIT_OK if mono else EXIT_BOUND


def cmd_theorem1(args):
    out = _outdir(args)
    ctl = _controls(args).with_(max_time=args.max_time or 30.0)
    t0 = time.perf_counter()
    scn = scenarios.make_scenario(args.type, args.m, args.mu)
    delta = args.delta if args.delta is not None else 0.05
    if scn.m == 3 and scn.kind == "S-I":
        plan, cnt, sys_ = scenarios.run_m3_construction(scn, args.r1, delta, ctl)
        ok = (cnt.beta_c >= 3 and cnt.beta_s == 1) or (cnt.beta_c >= 4 and cnt.beta_s == 0)
        rep = {
            "scenario": {"type": scn.kind, "m": scn.m, "mu": scn.mu},
            "plan": plan.as_dict(),
            "counts": {"beta_c": cnt.beta_c, "beta_s": cnt.beta_s},
            "inventory": cnt.as_dict(),
            "nesting": cnt.nesting,
            "bound_check": {"expected": ["(>=3, 1)", "(>=4, 0)"], "pass": ok},
        }
    else:
        if scn.kind in ("S-V",) or (scn.kind == "S-R" and scn.m == 2):
            red = scenarios.reduce_type(scn)
            print(f"{scn.kind} reduces to {red.target}; run the harness on the reduced type", file=sys.stderr)
            return EXIT_USAGE
        tr, cnt, sys_ = scenarios.run_theorem1(scn.kind, scn.m, args.ell, delta, scn.mu, ctl)
        ok = tr.satisfied
        rep = {
            "scenario": {"type": scn.kind, "m": scn.m, "mu": scn.mu},
            "plan": tr.plan,
            "counts": {"beta_c": tr.beta_c, "beta_s": tr.beta_s},
            "inventory": cnt.as_dict(),
            "nesting": tr.nesting,
            "nested": tr.nested,
            "bound_check": {"bound": tr.bound, "ell": tr.ell, "pass": ok, "missing": tr.missing},
            "admissibility": tr.admissibility,
        }
    rep["timings"] = {"total_s": time.perf_counter() - t0}
    _dump(os.path.join(out, "theorem1.json"), rep)
    loops = [fp.loop for fp in cnt.crossing if fp.loop is not None] + list(cnt.sliding)
    if loops:
        plot.loop_portrait(sys_, loops, os.path.join(out, "loops.svg"), f"{scn.kind} m={scn.m}")
    for i, lp in enumerate(loops):
        plot.loop_portrait(sys_, [lp], os.path.join(out, f"loop_{i:02d}.svg"), f"{lp.kind} loop {i}")
    status = "PASS" if ok else "FAIL"
    print(f"{status}: beta_c={cnt.beta_c} beta_s={cnt.beta_s} -> {out}/theorem1.json")
    if not ok:
        print(json.dumps(rep["bound_check"], default=_json_default), file=sys.stderr)
    return EXIT_OK if ok else EXIT_BOUND


COMMANDS = {
    "classify": cmd_classify,
    "simulate": cmd_simulate,
    "maps": cmd_maps,
    "unfold": cmd_unfold,
    "theorem1": cmd_theorem1,
}


def build_parser():
    p = argparse.ArgumentParser(prog="pwsgrazing", description=__doc__)
    p.add_argument("--command", "-c", required=True, choices=sorted(COMMANDS))
    p.add_argument("--system", help="system definition file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--tol", nargs=2, type=float, metavar=("REL", "ABS"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--max-arcs", type=int)
    p.add_argument("--max-time", "--t-max", dest="max_time", type=float)
    p.add_argument("--grid", type=int, default=1000)
    p.add_argument("-v", "--verbose", action="store_true")
    g = p.add_argument_group("simulate")
    g.add_argument("--start", nargs=2, type=float, metavar=("X", "Y"))
    g = p.add_argument_group("maps")
    g.add_argument("--map", choices=["return", "transition"], default="return")
    g.add_argument("--interval", nargs=2, type=float, metavar=("A", "B"))
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--section0", nargs=4, type=float, metavar=("BX", "BY", "DX", "DY"))
    g.add_argument("--section1", nargs=4, type=float, metavar=("BX", "BY", "DX", "DY"))
    g.add_argument("--half-width", type=float, default=0.1)
    g = p.add_argument_group("unfold / theorem1")
    g.add_argument("--type", default="S-I", choices=list(scenarios.TYPES))
    g.add_argument("--m", type=int, default=1)
    g.add_argument("--mu", type=float, default=0.1)
    g.add_argument("--ell", type=int, default=0)
    g.add_argument("--delta", type=float)
    g.add_argument("--r1", type=float, default=2.0)
    g.add_argument("--alpha", type=float)
    g.add_argument("--lam", type=float, nargs="+")
    g.add_argument("--params", help="UnfoldingParams JSON file")
    g.add_argument("--sweep-delta", type=float, help="initial spacing of a distance sweep")
    g.add_argument("--halvings", type=int, default=5)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, SystemFileError, ex.ExprSyntaxError, scenarios.ScenarioError, unfold.NotNormalForm) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ex.ExprEvalError, maps.SectionMissed, FloatingPointError, ZeroDivisionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
