"""End-to-end acceptance checks.

Each test covers one acceptance criterion, prints a single ``[PASS]`` or
``[FAIL]`` line and then asserts. Run on its own with::

    pytest tests/test_acceptance.py -s -q
"""
import itertools
import json
import math
import subprocess
import sys
from dataclasses import replace

import numpy as np

from cli_cases import CASES, GOLDEN
from commutant.cli import main
from commutant.distillation import build_atlas, distill_at, local_rank
from commutant.errors import NonCommutingFactorsError
from commutant.geometry import (
    Box,
    SmoothMap,
    bracket_field,
    commutativity_matrix,
    flow_commutator_defect,
    lie_bracket,
    numerical_jacobian,
)
from commutant.group_actions import actions_commute, orbit_rank, product_action
from commutant.matrix_exp import (
    MatrixDictionary,
    commutes,
    expm,
    expm_directional_derivative,
    fast_apply,
    joint_diagonalize,
    splitting_defect,
)
from commutant.prob_measures import (
    GaussianLikelihoodFamily,
    SampleMeasure,
    consistency_check,
    likelihood_gap,
    mixture_likelihood,
)
from commutant.scenarios import BUILTIN_IDS, load_builtin
from conftest import analytic_registry_fields

BRACKET_ZERO = 1e-6
DEFECT_ATOL = 1e-8


class Criterion:
    """Collects failures for one criterion and prints a verdict line."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.failures = []

    def check(self, ok, detail):
        if not ok:
            self.failures.append(detail)

    def finish(self, capsys):
        verdict = "PASS" if not self.failures else "FAIL"
        with capsys.disabled():
            print(f"\n[{verdict}] criterion {self.number}: {self.title}", flush=True)
            for f in self.failures[:10]:
                print(f"    {f}", flush=True)
        assert not self.failures, self.failures


def field_scenarios():
    return [load_builtin(sid) for sid in BUILTIN_IDS if len(load_builtin(sid).fields) >= 2]


def brackets_vanish(sc, names):
    fields = [sc.field(n) for n in names]
    C = commutativity_matrix(fields, sc.box.low_discrepancy(50))
    return float(C.max()) <= BRACKET_ZERO


def taylor_expm(A, terms=60):
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


# --- 1: bracket algebra --------------------------------------------------------


def test_criterion_1_bracket_algebra(capsys):
    crit = Criterion(1, "bracket antisymmetry, self-bracket, bilinearity, Jacobi on registry fields")
    rng = np.random.default_rng(1)
    by_scenario = {}
    for sid, name, X in analytic_registry_fields():
        by_scenario.setdefault(sid, []).append((name, X))
    for sid, fields in by_scenario.items():
        sc = load_builtin(sid)
        points = sc.box.sample(50, rng)
        for p in points:
            for (nx, X), (ny, Y) in itertools.product(fields, repeat=2):
                xy, yx = lie_bracket(X, Y, p), lie_bracket(Y, X, p)
                crit.check(np.linalg.norm(xy + yx) <= 1e-8, f"antisymmetry {sid} {nx},{ny}")
            for nx, X in fields:
                crit.check(np.linalg.norm(lie_bracket(X, X, p)) <= 1e-12, f"self-bracket {sid} {nx}")
            if len(fields) >= 2:
                (_, X), (_, Y) = fields[0], fields[1]
                Z = fields[-1][1]
                a, b = rng.uniform(-2, 2, 2)
                lhs = lie_bracket(X * a + Y * b, Z, p)
                rhs = a * lie_bracket(X, Z, p) + b * lie_bracket(Y, Z, p)
                crit.check(np.linalg.norm(lhs - rhs) <= 1e-6, f"bilinearity {sid}")
        # Jacobi over all triples; nested brackets go through a finite-difference layer
        for (_, X), (_, Y), (_, Z) in itertools.combinations_with_replacement(fields, 3):
            for p in points[:10]:
                total = (lie_bracket(X, bracket_field(Y, Z), p) + lie_bracket(Y, bracket_field(Z, X), p)
                         + lie_bracket(Z, bracket_field(X, Y), p))
                crit.check(np.linalg.norm(total) <= 1e-3, f"Jacobi {sid}")
        # stripping the analytic Jacobians leaves antisymmetry intact to FD accuracy
        for (nx, X), (ny, Y) in itertools.combinations(fields, 2):
            Xs, Ys = replace(X, jac=None), replace(Y, jac=None)
            for p in points[:10]:
                d = np.linalg.norm(lie_bracket(Xs, Ys, p) + lie_bracket(Ys, Xs, p))
                crit.check(d <= 1e-4, f"FD antisymmetry {sid} {nx},{ny}")
    crit.check(len(by_scenario) >= 6, "too few registry scenarios with analytic fields")
    crit.finish(capsys)


# --- 2: defect test equals bracket test -----------------------------------------


def defect_grid(sc, a, b):
    fa, fb = sc.flow(a), sc.flow(b)
    ra, rb = fa.refined(2), fb.refined(2)
    p = sc.box.center
    worst, err = 0.0, 0.0
    for s, t in itertools.product(np.linspace(-0.5, 0.5, 5), repeat=2):
        d = flow_commutator_defect(fa, fb, s, t, p)
        worst = max(worst, d)
        err = max(err, abs(flow_commutator_defect(ra, rb, s, t, p) - d))
    return worst, DEFECT_ATOL + 10.0 * err


def test_criterion_2_defect_iff_bracket(capsys):
    crit = Criterion(2, "vanishing flow defect on a 5x5 grid iff vanishing bracket on 50 points")
    verdicts = {}
    for sc in field_scenarios():
        for a, b in itertools.permutations(sc.field_names, 2):
            worst, tol = defect_grid(sc, a, b)
            flows_commute = worst <= tol
            fields_commute = brackets_vanish(sc, [a, b])
            verdicts[(sc.id, a, b)] = flows_commute
            crit.check(flows_commute == fields_commute,
                       f"{sc.id} {a},{b}: defect {worst:.3g} (tol {tol:.3g}), bracket zero {fields_commute}")
    crit.check(verdicts[("plane_translations", "translation_x", "translation_y")] is True,
               "plane translations should commute")
    for t in ("translation_x", "translation_y"):
        crit.check(verdicts[("se2_generators", "rotation", t)] is False, f"rotation vs {t} should not commute")
        crit.check(verdicts[("se2_generators", t, "rotation")] is False, f"{t} vs rotation should not commute")
    crit.finish(capsys)


# --- 3: leading-order defect ---------------------------------------------------


def test_criterion_3_defect_leading_order(capsys):
    crit = Criterion(3, "defect(s, s, p) / s^2 within 10% of the bracket norm at s = 1e-3")
    s = 1e-3
    pairs = [("se2_generators", "rotation", "translation_x", [0.2, 0.3, -0.1]),
             ("plane_euclidean", "rotation", "translation_y", [0.5, -0.4]),
             ("se2_frame_fields", "X1", "X2", [0.3, 0.1, 0.2])]
    for sid, a, b, p in pairs:
        sc = load_builtin(sid)
        ratio = flow_commutator_defect(sc.flow(a), sc.flow(b), s, s, p) / s ** 2
        expected = float(np.linalg.norm(lie_bracket(sc.field(a), sc.field(b), p)))
        crit.check(expected > 0.1, f"{sid} {a},{b}: bracket unexpectedly small")
        crit.check(abs(ratio - expected) <= 0.1 * expected, f"{sid} {a},{b}: {ratio} vs {expected}")
    crit.finish(capsys)


# --- 4: commuting dictionaries -------------------------------------------------


def shared_eigenbasis_dictionary(rng, n, k, complex_pairs):
    P = rng.standard_normal((n, n)) + n * np.eye(n)
    Pinv = np.linalg.inv(P)
    gens = []
    for _ in range(k):
        D = np.zeros((n, n))
        i = 0
        for _ in range(complex_pairs):
            a, b = rng.uniform(-1, 1, 2)
            D[i:i + 2, i:i + 2] = [[a, -b], [b, a]]
            i += 2
        D[range(i, n), range(i, n)] = rng.uniform(-1, 1, n - i)
        gens.append(P @ D @ Pinv)
    return MatrixDictionary(tuple(gens))


def test_criterion_4_commuting_dictionaries(capsys):
    crit = Criterion(4, "joint diagonalization, fast apply and splitting on random dictionaries")
    rng = np.random.default_rng(4)
    for trial in range(20):
        n = int(rng.integers(2, 7))
        # a shared eigenbasis spans at most n independent generators
        k = int(rng.integers(2, min(n, 4) + 1))
        pairs = int(rng.integers(0, n // 2 + 1)) if trial % 2 else 0
        d = shared_eigenbasis_dictionary(rng, n, k, pairs)
        diag = joint_diagonalize(d)
        crit.check(diag.residual <= 1e-8, f"trial {trial}: residual {diag.residual:.3g}")
        alpha, p = rng.uniform(-1, 1, k), rng.standard_normal(n)
        dev = np.linalg.norm(fast_apply(diag, alpha, p) - expm(d.combine(alpha)) @ p)
        crit.check(dev <= 1e-8, f"trial {trial}: fast_apply deviation {dev:.3g}")
        for A, B in itertools.combinations(d, 2):
            sd = splitting_defect(A, B)
            crit.check(sd <= 1e-10, f"trial {trial}: splitting defect {sd:.3g}")

        perturbed = list(d)
        perturbed[0] = perturbed[0] + 0.05 * rng.standard_normal((n, n))
        bad = MatrixDictionary(tuple(perturbed))
        crit.check(not commutes(bad)[0], f"trial {trial}: perturbed dictionary reported commuting")
        worst = max(splitting_defect(A, B, 1.0, 1.0) for A, B in itertools.combinations(bad, 2))
        crit.check(worst > 1e-6, f"trial {trial}: perturbed splitting defect {worst:.3g}")
    crit.finish(capsys)


# --- 5: expm -------------------------------------------------------------------


def test_criterion_5_expm_oracle(capsys):
    crit = Criterion(5, "expm vs 60-term Taylor series and expm(A) expm(-A) = I")
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        A = rng.standard_normal((n, n))
        A *= rng.uniform(0.01, 2.0) / np.linalg.norm(A)
        ref = taylor_expm(A)
        E = expm(A)
        rel = np.linalg.norm(E - ref) / np.linalg.norm(ref)
        crit.check(rel <= 1e-9, f"relative error {rel:.3g}")
        inv = np.linalg.norm(E @ expm(-A) - np.eye(n))
        crit.check(inv <= 1e-10, f"inverse identity {inv:.3g}")
    crit.finish(capsys)


# --- 6: Frechet derivative -----------------------------------------------------


def test_criterion_6_frechet(capsys):
    crit = Criterion(6, "directional derivative of expm vs central differences")
    rng = np.random.default_rng(6)
    h = 1e-5
    for _ in range(20):
        n, k = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        d = MatrixDictionary(tuple(rng.standard_normal((n, n)) / n for _ in range(k)))
        alpha0, i = rng.uniform(-1, 1, k), int(rng.integers(k))
        step = np.zeros(k)
        step[i] = h
        fd = (expm(d.combine(alpha0 + step)) - expm(d.combine(alpha0 - step))) / (2 * h)
        D = expm_directional_derivative(d, alpha0, i)
        rel = np.linalg.norm(D - fd) / np.linalg.norm(fd)
        crit.check(rel <= 1e-5, f"relative error {rel:.3g}")
    for _ in range(5):
        A = rng.standard_normal((3, 3))
        D = expm_directional_derivative(MatrixDictionary((A,)), [0.0], 0)
        crit.check(np.abs(D - A).max() <= 1e-9, "derivative at zero differs from the generator")
    crit.finish(capsys)


# --- 7: distillation -----------------------------------------------------------


def test_criterion_7_distillation(capsys):
    crit = Criterion(7, "local ranks, atlas coverage, full-rank validity boxes, stable circle atlas")
    rng = np.random.default_rng(7)
    ex = load_builtin("rank_examples")
    g = load_builtin("se2_chart_g").map("g")
    pi = load_builtin("circle_cover").map("pi")
    outer = SmoothMap.linear(np.outer([1.0, 2.0, -1.0], [0.5, 1.0]))
    wide = SmoothMap.linear(rng.standard_normal((4, 6)))
    product = SmoothMap(lambda x: np.array([x[0] * x[1], x[0] + x[1]]), 2, 2, name="product_sum")
    known = [(ex.map("identity"), [0.2, 0.1], 2), (ex.map("flat"), [0.3, -0.2, 0.9], 2),
             (ex.map("submersion"), [0.0, 0.0, 0.0], 2), (ex.map("constant"), [0.1, 0.2], 0),
             (ex.map("fold"), [0.0, 0.0], 1), (ex.map("fold"), [0.5, 0.0], 2), (g, [0.0, 0.0, 0.0], 3),
             (pi, [0.3], 1), (outer, [0.4, -0.3], 1), (wide, np.zeros(6), 4),
             (product, [1.0, 1.0], 1)]
    for f, x, r in known:
        got = local_rank(f, x).rank
        crit.check(got == r, f"rank of {f.name or 'map'} at {x}: {got} != {r}")

    atlases = [(ex.map("submersion"), Box.cube(3, 0.9).sample(40, rng)),
               (ex.map("identity"), Box.cube(2).sample(40, rng)),
               (g, g.box.scaled(0.8).sample(40, rng)),
               (pi, np.linspace(0.0, 2.0, 100).reshape(-1, 1))]
    for f, samples in atlases:
        atlas = build_atlas(f, samples)
        crit.check(atlas.coverage() == 1.0, f"atlas of {f.name} covers {atlas.coverage()}")
        for c in atlas.charts:
            S = list(c.selected)
            box = Box(c.base_point[S] - c.radius, c.base_point[S] + c.radius)
            if f.box is not None:
                box = box.intersect(Box(f.box.lo[S], f.box.hi[S]))
            for w in box.grid(4):
                J = numerical_jacobian(lambda v, c=c: f.func(c.latent(v)), w)
                crit.check(np.linalg.matrix_rank(J) == len(S), f"{f.name}: rank drop at {w}")

    for f, x in ((ex.map("fold"), [0.5, 0.2]), (ex.map("submersion"), [0.1, 0.2, 0.3])):
        d = distill_at(f, x)
        crit.check(d.rank == len(d.selected), f"{f.name}: selected latents do not match rank")

    samples = np.linspace(0.0, 2.0, 100).reshape(-1, 1)
    counts = {len(build_atlas(pi, samples)) for _ in range(3)}
    crit.check(counts == {2}, f"circle atlas chart counts {counts}")
    crit.finish(capsys)


# --- 8: group actions ----------------------------------------------------------


def test_criterion_8_group_actions(capsys):
    crit = Criterion(8, "orbit-rank constancy, symmetric commute check, product-action guard")
    rng = np.random.default_rng(8)
    actions = [(sid, n, a) for sid in BUILTIN_IDS for n, a in load_builtin(sid).actions.items()]
    for sid, name, action in actions:
        box = load_builtin(sid).box
        for p in box.scaled(0.3).sample(3, rng):
            base = orbit_rank(action, p).rank
            for _ in range(10):
                u = rng.standard_normal(action.param_dim)
                u *= rng.uniform(0, 1) / np.linalg.norm(u)
                got = orbit_rank(action, action(u, p)).rank
                crit.check(got == base, f"{sid}/{name}: rank {got} != {base}")
    for (_, na, a), (_, nb, b) in itertools.combinations(actions, 2):
        if a.dim != b.dim:
            continue
        ok1, d1 = actions_commute(a, b)
        ok2, d2 = actions_commute(b, a)
        crit.check(ok1 == ok2 and abs(d1 - d2) <= 1e-12, f"asymmetric commute check {na},{nb}")
    plane = load_builtin("plane_euclidean")
    try:
        product_action([plane.action("rotation"), plane.action("translation_x")])
        crit.check(False, "rotation and translation accepted")
    except NonCommutingFactorsError:
        pass
    prod = product_action([plane.action("translation_x"), plane.action("translation_y")])
    crit.check(prod.param_dim == 2, "translation product has wrong parameter count")
    crit.finish(capsys)


# --- 9: probability measures ---------------------------------------------------


def test_criterion_9_probability(capsys):
    crit = Criterion(9, "chart consistency, mixture collapse iff commutativity, closed-form gaps")
    chart_g = load_builtin("se2_chart_g")
    circle = load_builtin("circle_cover")
    pairs = [(chart_g, chart_g.map("g"), chart_g.map("g_shifted")),
             (chart_g, chart_g.map("g_shifted"), chart_g.map("g")),
             (chart_g, chart_g.map("g"), load_builtin("se2_chart_h").map("h")),
             (circle, circle.map("pi_restricted"), circle.map("pi_shifted"))]
    for sc, c1, c2 in pairs:
        m = SampleMeasure((c1.box or sc.box).scaled(0.5).low_discrepancy(30))
        v = consistency_check(m, c1, c2)
        crit.check(v <= 1e-9, f"consistency {c1.name},{c2.name}: {v:.3g}")

    T = (0.3, 0.2, 0.1)
    checked = 0
    for sc in field_scenarios():
        for k in (2, 3):
            for names in itertools.combinations(sc.field_names, k):
                rep = mixture_likelihood([sc.flow(n) for n in names], T[:k], sc.box.center)
                crit.check(rep.collapsed == brackets_vanish(sc, names),
                           f"{sc.id} {names}: collapsed {rep.collapsed}")
                checked += 1
    crit.check(checked >= 15, f"only {checked} factor sets checked")

    for sigma in (0.05, 0.1, 1.0, 3.0):
        fam = GaussianLikelihoodFamily(sigma)
        shift = np.array([0.3, -0.4])
        gaps = likelihood_gap(fam, lambda v: v, lambda v: v + shift, [[0.0, 0.0], [1.0, -2.0]])
        crit.check(np.abs(gaps - 0.25 / sigma ** 2).max() <= 1e-12, f"translation gap at sigma {sigma}")
        gaps = likelihood_gap(fam, lambda v: v, lambda v: v, [[0.5, 0.5]])
        crit.check(np.abs(gaps).max() == 0.0, "identical charts give nonzero gap")
        a = 0.2 * math.pi
        gap = likelihood_gap(fam, circle.map("pi_restricted"), circle.map("pi_shifted"), [[0.0]])[0]
        expected = ((math.cos(a) - 1.0) ** 2 + math.sin(a) ** 2) / sigma ** 2
        crit.check(abs(gap - expected) <= 1e-12 * max(1.0, expected), f"circle gap at sigma {sigma}")
    crit.finish(capsys)


# --- 10: CLI -------------------------------------------------------------------


def test_criterion_10_cli(capsys):
    crit = Criterion(10, "byte-identical reports, demo verdicts, golden files")
    runs = []
    for _ in range(2):
        proc = subprocess.run([sys.executable, "-m", "commutant", "paper-demo"], capture_output=True)
        runs.append(proc)
    crit.check(all(p.returncode == 0 for p in runs), "paper-demo exit code")
    crit.check(runs[0].stdout == runs[1].stdout, "paper-demo output differs between runs")
    res = json.loads(runs[0].stdout)["results"]
    crit.check(res["summary"]["se2_generators_commute"] is False, "demo reports se2 generators commuting")
    crit.check(res["summary"]["plane_translations_commute"] is True, "demo reports translations not commuting")
    for name, argv in sorted(CASES.items()):
        outs = []
        for _ in range(2):
            code = main(list(argv))
            outs.append(capsys.readouterr().out)
            crit.check(code == 0, f"{name}: exit code {code}")
        crit.check(outs[0] == outs[1], f"{name}: output differs between runs")
        suffix = ".csv" if "--format" in argv else ".json"
        crit.check(outs[0] == (GOLDEN / (name + suffix)).read_text(), f"{name}: golden mismatch")
    subcommands = {argv[0] for argv in CASES.values()}
    crit.check(subcommands >= {"bracket", "defect", "expm", "distill", "mixture", "paper-demo",
                               "scenario-validate"}, f"goldens miss subcommands: {subcommands}")
    crit.finish(capsys)
