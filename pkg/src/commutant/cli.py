"""``commutant`` command-line interface.

Every subcommand writes one report (JSON by default, ``--format csv`` for a
flat key/value table) to stdout or ``--output``. Exit codes: 0 success,
2 input or usage error, 3 violated mathematical precondition
(non-commuting generators or factors, rank deficiency).
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .distillation import DEFAULT_RANK_TOL, build_atlas, local_rank
from .errors import CommutantError, PreconditionViolation
from .geometry import (
    DEFAULT_STEPS_PER_UNIT,
    Box,
    Flow,
    as_point,
    commutativity_matrix,
    flow_commutator_defect,
    frame_fields,
    lie_bracket,
)
from .matrix_exp import (
    commutes,
    default_commute_tol,
    expm,
    fast_apply,
    joint_diagonalize,
    splitting_defect,
)
from .prob_measures import DEFAULT_SIGMA, GaussianLikelihoodFamily, mixture_likelihood
from .report import Report
from .scenarios import BUILTIN_IDS, load_any, load_builtin, load_scenario_file

EXIT_OK, EXIT_INPUT, EXIT_PRECONDITION = 0, 2, 3

_J2 = [[0.0, -1.0], [1.0, 0.0]]
BUILTIN_DICTIONARIES = {
    "diagonal": [[[1.0, 0.0], [0.0, 2.0]], [[-1.0, 0.0], [0.0, 0.5]]],
    "rotation": [_J2],
    "rotation_scaling": [_J2, [[1.0, 0.0], [0.0, 1.0]]],
    "nilpotent": [[[0.0, 1.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]],
    "se2_homogeneous": [
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]],
    ],
}


class UsageError(CommutantError):
    pass


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def _mapper():
    """Order-preserving map, threaded when ``COMMUTANT_THREADS`` > 1."""
    try:
        n = int(os.environ.get("COMMUTANT_THREADS", "1"))
    except ValueError:
        n = 1
    if n <= 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=n)
    return pool.map, pool


def _sample_points(box: Box, sampler: str, n: int) -> np.ndarray:
    if sampler == "grid":
        return box.grid(n)
    if sampler == "halton":
        return box.low_discrepancy(n)
    raise UsageError(f"unknown sampler {sampler!r}")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_bracket(args) -> Report:
    sc = load_any(args.scenario)
    names = _names(args.fields) if args.fields else sc.field_names
    fields = [sc.field(n) for n in names]
    if len(fields) < 2:
        raise UsageError("bracket needs at least two fields")
    pts = _sample_points(sc.box.scaled(args.box_scale), args.sampler, args.n)
    mapper, pool = _mapper()
    try:
        C = commutativity_matrix(fields, pts, args.h, mapper=mapper)
    finally:
        if pool is not None:
            pool.shutdown()
    per_point = []
    for i, j in itertools.combinations(range(len(fields)), 2):
        vals = [lie_bracket(fields[i], fields[j], p, args.h) for p in pts]
        per_point.append({"pair": [names[i], names[j]], "brackets": vals})
    commuting = (C <= args.tol).tolist()
    return Report("bracket", sc.id, {
        "fields": names, "sampler": args.sampler, "n": args.n, "box_scale": args.box_scale,
        "h": args.h, "tol": args.tol}, {
        "fields": names,
        "commutativity_matrix": C,
        "commuting": commuting,
        "all_commute": bool(np.all(C <= args.tol)),
        "points": pts,
        "per_point": per_point,
    })


def _scenario_flow(sc, name: str, steps_per_unit: int) -> Flow:
    flow = sc.flow(name)
    if flow.kind != "closed" and steps_per_unit != flow.steps_per_unit:
        flow = Flow.from_field(flow.field, flow.box, steps_per_unit, name)
    return flow


def cmd_defect(args) -> Report:
    sc = load_any(args.scenario)
    names = _names(args.flows)
    if len(names) != 2:
        raise UsageError("--flows takes exactly two flow names")
    fi, fj = (_scenario_flow(sc, n, args.steps_per_unit) for n in names)
    p = as_point(_floats(args.point), sc.dim) if args.point else sc.box.center
    if args.grid <= 1:
        grid = [(args.s, args.t)]
    else:
        grid = [(s, t) for s in np.linspace(-args.s, args.s, args.grid)
                for t in np.linspace(-args.t, args.t, args.grid)]
    rows = [{"s": float(s), "t": float(t), "defect": flow_commutator_defect(fi, fj, s, t, p)}
            for s, t in grid]
    return Report("defect", sc.id, {
        "flows": names, "s": args.s, "t": args.t, "grid": args.grid, "point": p,
        "steps_per_unit": args.steps_per_unit}, {
        "rows": rows,
        "max_defect": max(r["defect"] for r in rows),
    })


def _load_dictionary(ref: str):
    if ref in BUILTIN_DICTIONARIES:
        return [np.array(A) for A in BUILTIN_DICTIONARIES[ref]]
    try:
        with open(ref, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read dictionary {ref!r}: {exc.strerror} "
                         f"(builtins: {', '.join(BUILTIN_DICTIONARIES)})") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{ref}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    gens = doc.get("generators") if isinstance(doc, dict) else doc
    if not isinstance(gens, list) or not gens:
        raise UsageError(f"{ref}: expected a list of matrices or an object with 'generators'")
    try:
        return [np.array(A, dtype=float) for A in gens]
    except (TypeError, ValueError):
        raise UsageError(f"{ref}: generators must be numeric matrices") from None


def cmd_expm(args) -> Report:
    from scipy.stats import qmc

    gens = _load_dictionary(args.dict)
    n, k = gens[0].shape[0], len(gens)
    if any(A.ndim != 2 or A.shape != (n, n) for A in gens):
        raise UsageError("generators must be square matrices of one size")
    if args.alpha:
        alphas = [np.array(_floats(a)) for a in args.alpha]
        if any(a.size != k for a in alphas):
            raise UsageError(f"each --alpha needs {k} values")
    else:
        u = qmc.Halton(d=k, scramble=False).random(args.sweep + 1)[1:]
        alphas = list((2.0 * u - 1.0) * args.alpha_radius)
    p = np.array(_floats(args.point)) if args.point else np.ones(n)
    if p.size != n:
        raise UsageError(f"--point needs {n} values")
    tol = args.tol if args.tol is not None else default_commute_tol(gens)
    ok, mx = commutes(gens, tol)
    pairs = [{"pair": [i, j], "splitting_defect": splitting_defect(gens[i], gens[j], 1.0, 1.0)}
             for i, j in itertools.combinations(range(k), 2)]
    results = {"commutes": ok, "max_commutator": mx, "commute_tol": tol,
               "splitting_defects": pairs}
    diag = None
    if args.mode in ("fast", "both"):
        diag = joint_diagonalize(gens, tol)
        results["diagonalization"] = {"residual": diag.residual, "condition": diag.condition,
                                      "seed": diag.seed}
    rows = []
    for a in alphas:
        row = {"alpha": a}
        if args.mode in ("direct", "both"):
            M = np.tensordot(a, np.stack(gens), axes=1)
            row["direct"] = expm(M) @ p
        if diag is not None:
            row["fast"] = fast_apply(diag, a, p)
        if args.mode == "both":
            row["deviation"] = float(np.linalg.norm(row["direct"] - row["fast"]))
        rows.append(row)
    results["rows"] = rows
    if args.mode == "both":
        results["max_deviation"] = max(r["deviation"] for r in rows)
    return Report("expm", args.dict, {
        "mode": args.mode, "alpha": [list(a) for a in alphas], "point": p,
        "tol": tol}, results)


def cmd_distill(args) -> Report:
    sc = load_any(args.scenario)
    f = sc.map(args.map)
    box = f.box if f.box is not None else Box.cube(f.in_dim)
    lo = np.array(_floats(args.lo)) if args.lo else box.lo
    hi = np.array(_floats(args.hi)) if args.hi else box.hi
    try:
        sbox = Box(np.broadcast_to(lo, (f.in_dim,)), np.broadcast_to(hi, (f.in_dim,)))
    except ValueError as exc:
        raise UsageError(f"bad sample box: {exc}") from None
    samples = _sample_points(sbox, args.sampler, args.n)
    atlas = build_atlas(f, samples, args.tol)
    ranks = [local_rank(f, s, args.tol).rank for s in samples]
    return Report("distill", sc.id, {
        "map": args.map, "sampler": args.sampler, "n": args.n, "lo": sbox.lo, "hi": sbox.hi,
        "tol": args.tol}, {
        "latent_dim": f.in_dim,
        "data_dim": f.out_dim,
        "ranks": ranks,
        "chart_count": len(atlas),
        "coverage": atlas.coverage(),
        "atlas": atlas.to_json(),
    })


def cmd_mixture(args) -> Report:
    sc = load_any(args.scenario)
    names = _names(args.factors)
    flows = [_scenario_flow(sc, n, args.steps_per_unit) for n in names]
    T = _floats(args.T)
    p = as_point(_floats(args.point), sc.dim) if args.point else sc.box.center
    prior = _floats(args.prior) if args.prior else None
    rep = mixture_likelihood(flows, T, p, prior, GaussianLikelihoodFamily(args.sigma))
    results = rep.to_json()
    results.update({
        "orderings": [[names[i] for i in o] for o in rep.orderings],
        "collapse_tolerance": rep.tolerance,
        "prior_renormalized": rep.prior_renormalized,
    })
    if args.x:
        results["log_likelihood"] = rep.log_likelihood(_floats(args.x))
    return Report("mixture", sc.id, {
        "factors": names, "T": T, "point": p, "sigma": args.sigma, "prior": prior,
        "x": _floats(args.x) if args.x else None, "steps_per_unit": args.steps_per_unit},
        results)


def _matrix_block(fields, names, pts, tol):
    C = commutativity_matrix(fields, pts)
    return {"fields": names, "commutativity_matrix": C, "commuting": (C <= tol).tolist(),
            "all_commute": bool(np.all(C <= tol))}


def cmd_paper_demo(args) -> Report:
    tol = args.tol
    gen = load_builtin("se2_generators")
    chart = load_builtin("se2_chart_g")
    literal = load_builtin("se2_frame_fields")
    plane = load_builtin("plane_translations")
    se2_pts = gen.box.scaled(0.5).low_discrepancy(args.n)
    g = chart.map("g")
    results = {
        "se2_generators": _matrix_block(list(gen.fields.values()), gen.field_names, se2_pts, tol),
        "chart_g_frames": _matrix_block(list(chart.fields.values()), chart.field_names, se2_pts, tol),
        "chart_g_pushforward_frames": _matrix_block(
            frame_fields(g), [f"pushforward_{i}" for i in range(3)], se2_pts, tol),
        "literal_frames": _matrix_block(list(literal.fields.values()), literal.field_names,
                                        se2_pts, tol),
        "plane_translations": _matrix_block(list(plane.fields.values()), plane.field_names,
                                            plane.box.scaled(0.5).low_discrepancy(args.n), tol),
    }
    p0 = np.array([0.2, 0.3, -0.1])
    s_values = [0.4 * 2.0 ** -i for i in range(8)]
    curves = {}
    for label, sc, a, b in (("generators_rotation_vs_translation_x", gen, "rotation", "translation_x"),
                            ("chart_g_frame_0_vs_frame_1", chart, "frame_0", "frame_1")):
        d = [flow_commutator_defect(sc.flow(a), sc.flow(b), s, s, p0) for s in s_values]
        curves[label] = {"s": s_values, "defect": d, "defect_over_s2": [x / s ** 2 for x, s in zip(d, s_values)],
                         "bracket_norm": float(np.linalg.norm(lie_bracket(sc.field(a), sc.field(b), p0)))}
    T = [0.3, 0.2, 0.1]
    mixtures = {
        "se2_generators": mixture_likelihood([gen.flow(n) for n in gen.field_names], T, p0).to_json(),
        "chart_g_frames": mixture_likelihood([chart.flow(n) for n in chart.field_names], T, p0).to_json(),
    }
    results["defect_curves"] = curves
    results["mixtures"] = mixtures
    results["summary"] = {
        "se2_generators_commute": results["se2_generators"]["all_commute"],
        "chart_g_frames_commute": results["chart_g_frames"]["all_commute"],
        "literal_frames_commute": results["literal_frames"]["all_commute"],
        "plane_translations_commute": results["plane_translations"]["all_commute"],
        "se2_generators_mixture_collapsed": mixtures["se2_generators"]["collapsed"],
        "chart_g_frames_mixture_collapsed": mixtures["chart_g_frames"]["collapsed"],
    }
    return Report("paper-demo", "se2_generators,se2_chart_g,se2_frame_fields,plane_translations",
                  {"tol": tol, "n": args.n, "point": p0, "T": T}, results)


def cmd_scenario_validate(args) -> Report:
    sc = load_scenario_file(args.file)
    return Report("scenario-validate", sc.id, {"file": os.path.basename(args.file)}, {
        "valid": True,
        "dim": sc.dim,
        "domain": sc.box.to_pairs(),
        "fields": sc.field_names,
        "flows": {n: f.kind for n, f in sc.flows.items()},
        "maps": list(sc.maps),
        "actions": list(sc.actions),
    })


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="commutant", formatter_class=fmt,
        description="Commutativity diagnostics for factors of variation. "
                    f"Builtin scenarios: {', '.join(BUILTIN_IDS)}. Vectors are comma-separated; "
                    "write a leading minus as --point=-1,0.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--output", "-o", help="write the report here instead of stdout")
    common.add_argument("--timing", action="store_true",
                        help="include wall time (makes output non-reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bracket", parents=[common], formatter_class=fmt,
                       help="commutativity matrix of Lie brackets")
    p.add_argument("--scenario", required=True, help="builtin id or scenario .json file")
    p.add_argument("--fields", help="comma-separated field names (default: all)")
    p.add_argument("--sampler", choices=("halton", "grid"), default="halton")
    p.add_argument("--n", type=int, default=20, help="points (halton) or points per axis (grid)")
    p.add_argument("--box-scale", type=float, default=1.0, help="shrink factor for the domain box")
    p.add_argument("--h", type=float, default=None,
                   help="finite-difference step (default eps^(1/3) max(1, |p|_inf))")
    p.add_argument("--tol", type=float, default=1e-6, help="bracket norm counted as zero")
    p.set_defaults(func=cmd_bracket)

    p = sub.add_parser("defect", parents=[common], formatter_class=fmt,
                       help="flow-commutator defect on an (s, t) grid")
    p.add_argument("--scenario", required=True)
    p.add_argument("--flows", required=True, help="two comma-separated flow names")
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--grid", type=int, default=5, help="grid size over [-s,s]x[-t,t]; 1 = single (s,t)")
    p.add_argument("--point", help="base point (default: domain centre)")
    p.add_argument("--steps-per-unit", type=int, default=DEFAULT_STEPS_PER_UNIT,
                   help="RK4 steps per unit time for integrated flows")
    p.set_defaults(func=cmd_defect)

    p = sub.add_parser("expm", parents=[common], formatter_class=fmt,
                       help="matrix exponential of a generator dictionary")
    p.add_argument("--dict", required=True,
                   help=f"JSON file of generators or builtin: {', '.join(BUILTIN_DICTIONARIES)}")
    p.add_argument("--alpha", action="append", help="comma-separated coefficients (repeatable)")
    p.add_argument("--sweep", type=int, default=5, help="Halton alpha samples when --alpha is absent")
    p.add_argument("--alpha-radius", type=float, default=1.0,
                   help="alpha sweep box half-width (no natural default exists)")
    p.add_argument("--point", help="data vector (default: ones)")
    p.add_argument("--mode", choices=("direct", "fast", "both"), default="both")
    p.add_argument("--tol", type=float, default=None,
                   help="commutator tolerance (default 1e-10 max ||A_i||_F^2)")
    p.set_defaults(func=cmd_expm)

    p = sub.add_parser("distill", parents=[common], formatter_class=fmt,
                       help="local ranks and a distillation atlas of a scenario map")
    p.add_argument("--scenario", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--sampler", choices=("grid", "halton"), default="grid")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--lo", help="sample box lower corner (default: map domain)")
    p.add_argument("--hi", help="sample box upper corner (default: map domain)")
    p.add_argument("--tol", type=float, default=DEFAULT_RANK_TOL, help="relative rank tolerance")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("mixture", parents=[common], formatter_class=fmt,
                       help="ordering mixture of composed flows")
    p.add_argument("--scenario", required=True)
    p.add_argument("--factors", required=True, help="comma-separated flow names (at most 6)")
    p.add_argument("--T", required=True, help="comma-separated flow times")
    p.add_argument("--point", help="base point (default: domain centre)")
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    p.add_argument("--prior", help="weights over orderings (lexicographic); renormalized")
    p.add_argument("--x", help="observation at which to evaluate the mixture log-likelihood")
    p.add_argument("--steps-per-unit", type=int, default=DEFAULT_STEPS_PER_UNIT)
    p.set_defaults(func=cmd_mixture)

    p = sub.add_parser("paper-demo", parents=[common], formatter_class=fmt,
                       help="rotation/translation walkthrough in one report")
    p.add_argument("--tol", type=float, default=1e-6, help="bracket norm counted as zero")
    p.add_argument("--n", type=int, default=20, help="sample points per scenario")
    p.set_defaults(func=cmd_paper_demo)

    p = sub.add_parser("scenario-validate", parents=[common], formatter_class=fmt,
                       help="validate a scenario file")
    p.add_argument("file")
    p.set_defaults(func=cmd_scenario_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        report = args.func(args)
    except PreconditionViolation as exc:
        print(f"commutant {args.command}: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (CommutantError, ValueError, IndexError) as exc:
        print(f"commutant {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report.version = __version__
    if args.timing:
        report.wall_time = time.perf_counter() - start
    text = report.render(args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
