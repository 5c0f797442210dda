"""Acceptance criteria 1-9, one test each; every test prints a PASS/FAIL line."""

import json
import math
import time
from importlib import resources

import numpy as np
import pytest

from fixlab.algebra import determinant, elementary_matrix, permutation_matrix
from fixlab.cli import cmd_expander, cmd_game
from fixlab.expander import (
    CayleyGraph,
    brute_force_scalar,
    build_cayley,
    poincare_exact_scalar,
    poincare_upper_lq,
    standard_generating_images,
)
from fixlab.game import run_strategy, scenario_elementary
from fixlab.geometry import (
    GluedSquares,
    Segment,
    check_TP,
    distance,
    is_parallel,
    midpoint,
    parallel_distances,
    planted_npc1_counterexample,
    random_npc_batch,
)
from fixlab.groups import FiniteMatrixGroup, closure, perfectness_certificate, sl_order
from fixlab.realizer import (
    affine_subspace,
    check_pseudo_uniqueness,
    check_realizer_parallelism,
    d3_action,
    energy_midpoint_convexity,
    fixed_set,
    minimize_theta_energy,
    parallel_lines_action,
    realize_distance,
    run_case,
    self_improvement_check,
    RealizerTuple,
)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail, elapsed=None):
        timing = f" [{elapsed:.2f}s]" if elapsed is not None else ""
        with capsys.disabled():
            print(f"\nACCEPTANCE C{k}: {'PASS' if ok else 'FAIL'}{timing} {detail}")
        assert ok, detail

    return emit


def all_checks_passed(trace):
    return all(c["passed"] is True for rec in trace if rec.get("validation") for c in rec["validation"]["checks"])


def test_c1_game_certificate_n3(report):
    t = time.perf_counter()
    res = run_strategy(*scenario_elementary(3, 2))
    elapsed = time.perf_counter() - t
    orders = res.orders(1)
    ok = res.label == "win(1)" and orders == [4, 24, 168] and all_checks_passed(res.trace) and elapsed < 1.0
    report(1, ok, f"verdict {res.label}, H_1 orders {orders}", elapsed)


def test_c2_game_certificate_n4(report):
    t = time.perf_counter()
    res = run_strategy(*scenario_elementary(4, 2))
    elapsed = time.perf_counter() - t
    move1 = res.trace[1]["validation"]
    torsion = move1["torsion"]
    witnesses = perfectness_certificate([1, 2, 3], 2, 4)
    ok = (
        res.label == "win(1)"
        and res.orders(1)[-1] == 20160 == sl_order(4, 2)
        and torsion is not None
        and torsion["result"] is True
        and bool(move1["perfectness"])
        and all(w.verified for w in witnesses)
        and len(witnesses) == 6
        and all_checks_passed(res.trace)
        and elapsed < 60
    )
    report(2, ok, f"verdict {res.label}, final order {res.orders(1)[-1]}, torsion {torsion['note']!r}, {len(witnesses)} commutator witnesses", elapsed)


def test_c3_steinberg_relations(report):
    t = time.perf_counter()
    counts = {(m, p): len(standard_generating_images(m, p).relation_violations()) for m, p in [(1, 2), (1, 3), (2, 2), (2, 3), (3, 2)]}
    elapsed = time.perf_counter() - t
    ok = all(v == 0 for v in counts.values()) and elapsed < 10
    report(3, ok, f"violations {counts}", elapsed)


def test_c4_mother_group_surjectivity(report):
    t = time.perf_counter()
    got = {}
    for m, p in [(1, 2), (1, 3)]:
        mq = standard_generating_images(m, p)
        in_sl = all(determinant(g) == 1 for g in mq.generators)
        got[(m, p)] = (len(closure(mq.generators)), sl_order(4 * m, p), in_sl)
    elapsed = time.perf_counter() - t
    # generators of determinant 1 whose closure has |SL| elements generate all of SL
    ok = all(c == o and s for c, o, s in got.values()) and elapsed < 30
    report(4, ok, f"(closure, formula, det 1) {got}", elapsed)


def _graphs_up_to_200():
    def sl(n, p):
        G = FiniteMatrixGroup.elementary(n, p)
        return build_cayley(G, list(G.generators))

    c = permutation_matrix([1, 2, 3, 0], 2)
    return {
        "C4": CayleyGraph.from_cyclic(4, [1, -1]),
        "C4-perm": build_cayley(FiniteMatrixGroup([c]), [c]),
        "K4": CayleyGraph.from_cyclic(4, [1, 2, 3]),
        "K7": CayleyGraph.from_cyclic(7, range(1, 7)),
        "C10": CayleyGraph.from_cyclic(10, [1, -1]),
        "C50": CayleyGraph.from_cyclic(50, [1, -1]),
        "C200": CayleyGraph.from_cyclic(200, [1, -1]),
        "Z200(1,7)": CayleyGraph.from_cyclic(200, [1, -1, 7, -7]),
        "SL(2,2)": sl(2, 2),
        "SL(2,3)": sl(2, 3),
        "SL(2,5)": sl(2, 5),
        "SL(3,2)": sl(3, 2),
    }


def test_c5_poincare_exactness(report):
    K4, C4 = CayleyGraph.from_cyclic(4, [1, 2, 3]), CayleyGraph.from_cyclic(4, [1, -1])
    k4, c4 = poincare_exact_scalar(K4).value, poincare_exact_scalar(C4).value
    brute = brute_force_scalar(K4, restarts=50), brute_force_scalar(C4, restarts=50)
    ok = abs(k4 - 2 / 3) < 1e-9 and abs(c4 - 0.5) < 1e-9 and abs(brute[0] - 2 / 3) < 1e-6 and abs(brute[1] - 0.5) < 1e-6
    gaps = {}
    t = time.perf_counter()
    for name, g in _graphs_up_to_200().items():
        assert g.vertex_count <= 200
        exact = poincare_exact_scalar(g).value
        est = poincare_upper_lq(g, q=2, d=1, restarts=20, seed=0, spectral_start=False)
        gaps[name] = est.value - exact
        ok &= est.restarts <= 20 and -1e-9 <= gaps[name] <= 1e-6
    worst = max(gaps, key=lambda k: abs(gaps[k]))
    report(5, ok, f"K4 {k4:.12f}, C4 {c4:.12f}; optimizer on {len(gaps)} graphs, worst gap {gaps[worst]:.2e} ({worst})", time.perf_counter() - t)


def _mesh_distance(x, y, spacing=1e-3):
    a, b = x.array(), y.array()
    if x.chart == y.chart:
        return float(np.hypot(*(a - b)))
    s = np.linspace(0.0, 1.0, int(round(1 / spacing)) + 1)
    c = np.stack([1 - s, s], axis=1)
    return float(np.min(np.hypot(*(a - c).T) + np.hypot(*(c - b).T)))


def test_c6_glued_square(report):
    t = time.perf_counter()
    X = GluedSquares()
    A, B, C, D, E = (X.vertices[k] for k in "ABCDE")
    AB, DC, EB = Segment(A, B), Segment(D, C), Segment(E, B)

    def mesh_triple(s1, s2):
        return (_mesh_distance(s1.start, s2.start), _mesh_distance(s1.end, s2.end), _mesh_distance(midpoint(s1), midpoint(s2)))

    ok = is_parallel(AB, DC, 1e-6) and is_parallel(DC, EB, 1e-6) and not is_parallel(AB, EB, 1e-6)
    for s1, s2 in ((AB, DC), (DC, EB)):
        ok &= np.allclose(parallel_distances(s1, s2), 1, atol=1e-6) and np.allclose(mesh_triple(s1, s2), 1, atol=1e-6)
    ok &= abs(distance(A, E) - math.sqrt(2)) < 1e-6 and abs(_mesh_distance(A, E) - math.sqrt(2)) < 1e-6
    tp = check_TP(AB, DC, EB, tol=1e-6)
    ok &= tp.violated
    elapsed = time.perf_counter() - t
    report(6, ok and elapsed < 5, f"d(A,E) = {distance(A, E):.9f}, TP {'violated' if tp.violated else 'holds'}", elapsed)


def test_c7_npc_suite(report):
    t = time.perf_counter()
    total, applicable = 0, {}
    for q in (1.5, 2.0, 3.0):
        for d in (2, 3):
            got = random_npc_batch(q, d, 1000, np.random.default_rng(int(10 * q) + d), tol=1e-9)
            for name, row in got.items():
                total += row["violations"]
                applicable[name] = applicable.get(name, 0) + row["applicable"]
    planted = planted_npc1_counterexample()
    ok = total == 0 and planted.violated and all(v > 0 for v in applicable.values())
    report(7, ok, f"{total} violations over 6 x 1000 pairs (applicable {applicable}); planted control caught: {planted.violated}", time.perf_counter() - t)


def test_c8_realizer_suite(report):
    t = time.perf_counter()
    tol = 1e-8
    results = {}

    # pseudo-uniqueness of distance realizers
    act = parallel_lines_action()
    r = realize_distance(fixed_set(act, ["r0"]), fixed_set(act, ["r1"]))
    rep = check_pseudo_uniqueness(act, ["r0"], ["r1"], r.points, [p + [3.0, 0.0] for p in r.points], tol)
    results["pseudo-uniqueness"] = rep.passed and max(rep.residuals["difference_gap"], rep.residuals["pi_fixed_residual"]) <= tol

    # parallelism of two energy minimizers
    lines = [affine_subspace([0, y], [[1], [0]]) for y in (0, 1, 2)]
    z = minimize_theta_energy(lines)
    z2 = RealizerTuple([p + [2.0, 0.0] for p in z.points], 0.0, "energy", fixed_sets=lines)
    rep = check_realizer_parallelism(z, z2, tol)
    results["energy-parallelism"] = rep.passed and rep.residuals["max_parallel_gap"] <= tol

    # orbit parallelism and the fixed-point conclusions on both D3 scenarios
    for cocycle in ("trivial", "coboundary"):
        act = d3_action(cocycle)
        a, b = act.elements
        G = act.group
        rep = self_improvement_check(act, G.subgroup([a]), G.subgroup([b]), G.subgroup([a]), G.subgroup([a, b]), [a], samples=500, tol=tol)
        results[f"self-improvement-{cocycle}"] = rep.passed and max(rep.residuals.values()) <= tol

    # the bundled corpus, including its negative controls
    cases = json.loads((resources.files("fixlab") / "data" / "realizer_corpus.json").read_text())
    results["corpus"] = all(run_case(c)[0] for c in cases)

    rng = np.random.default_rng(8)
    sets = [affine_subspace(rng.standard_normal(3), rng.standard_normal((3, k))) for k in (1, 2, 2, 0)]
    worst = energy_midpoint_convexity(sets, 1000, rng)
    results["energy-convexity"] = worst <= 1e-10
    ok = all(results.values())
    report(8, ok, f"{results}, worst midpoint excess {worst:.2e}", time.perf_counter() - t)


def test_c9_determinism(report, tmp_path):
    t = time.perf_counter()
    dirs = [tmp_path / "run1", tmp_path / "run2"]
    codes = []
    for d in dirs:
        codes.append(cmd_expander([1], 2, [2.0, 3.0], d=3, restarts=5, seed=11, out=d / "expander"))
        codes.append(cmd_game("elementary-3-2", out=d / "game"))
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
    same = all((dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files)
    ok = same and codes == [0, 0, 0, 0] and len(files) == 5
    report(9, ok, f"{len(files)} output files byte-identical: {same}", time.perf_counter() - t)
