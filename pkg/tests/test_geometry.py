import itertools
import json
import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.stats import special_ortho_group

from fixlab.geometry import (
    GluedSquares,
    LqSpace,
    Segment,
    SpaceMismatchError,
    check_NPC1,
    check_NPC2,
    check_NPC3,
    check_TP,
    check_theta_NPC1,
    distance,
    is_parallel,
    is_parallel_perp,
    midpoint,
    parallel_distances,
    planted_npc1_counterexample,
    polyline,
    random_npc_batch,
    run_case,
)

X = GluedSquares()
V = X.vertices
A, B, C, D, Ev = (V[k] for k in "ABCDE")
SQRT2 = math.sqrt(2)


def crossing_mesh_distance(x, y, spacing=1e-3):
    """Glued distance from a mesh of crossing points on the shared edge.

    Inside one piece the metric is Euclidean (both pieces are convex); a path
    between the pieces crosses the edge from (1, 0) to (0, 1) once.
    """
    a, b = x.array(), y.array()
    if x.chart == y.chart:
        return float(np.hypot(*(a - b)))
    s = np.linspace(0.0, 1.0, int(round(1 / spacing)) + 1)
    c = np.stack([1 - s, s], axis=1)
    return float(np.min(np.hypot(*(a - c).T) + np.hypot(*(c - b).T)))


def glued_points(rng, k):
    out = []
    for _ in range(k):
        if rng.random() < 0.5:
            out.append(X.point("square", rng.random(2)))
        else:
            u = rng.random(2)
            if u.sum() > 1:
                u = 1 - u
            out.append(X.point("flap", u))
    return out


def test_vertex_distances():
    assert abs(distance(A, Ev) - SQRT2) < 1e-12
    assert abs(distance(D, Ev) - 1) < 1e-12
    assert abs(distance(C, B) - 1) < 1e-12
    assert distance(A, A) == 0 and distance(Ev, Ev) == 0


def test_midpoints():
    m = midpoint(Segment(A, Ev))
    assert m.chart == "square" and np.allclose(m.coords, (0.5, 0.5))
    s = Segment(B, Ev)
    assert midpoint(s, 0) == B and midpoint(s, 1) == Ev
    for q in (1.5, 2, 3, 7):
        L = LqSpace(q, 2)
        assert np.allclose(midpoint(Segment(L.point((0, 0)), L.point((2, 0)))).coords, (1, 0))


def test_distances_match_crossing_mesh():
    rng = np.random.default_rng(0)
    pts = list(V.values()) + glued_points(rng, 60)
    for x, y in itertools.combinations(pts, 2):
        mesh = crossing_mesh_distance(x, y)
        assert abs(distance(x, y) - mesh) < 1e-2
        # a sampled crossing can only lengthen the path
        assert mesh >= distance(x, y) - 1e-12


def test_geodesic_is_split_by_the_midpoint():
    rng = np.random.default_rng(1)
    pts = glued_points(rng, 40)
    for x, y in zip(pts[::2], pts[1::2]):
        for t in (0.25, 0.5, 0.8):
            m = midpoint(Segment(x, y), t)
            assert abs(distance(x, m) - t * distance(x, y)) < 1e-9
            assert abs(distance(m, y) - (1 - t) * distance(x, y)) < 1e-9


def test_triangle_inequality():
    rng = np.random.default_rng(2)
    pts = list(V.values()) + glued_points(rng, 15)
    for x, y, z in itertools.permutations(pts, 3):
        assert distance(x, z) <= distance(x, y) + distance(y, z) + 1e-12
    for x, y, z in itertools.permutations(V.values(), 3):
        assert crossing_mesh_distance(x, z) <= crossing_mesh_distance(x, y) + crossing_mesh_distance(y, z) + 1e-9


def test_glued_parallel_examples():
    assert is_parallel(Segment(A, B), Segment(D, C), tol=1e-6)
    assert is_parallel(Segment(D, C), Segment(Ev, B), tol=1e-6)
    assert not is_parallel(Segment(A, B), Segment(Ev, B), tol=1e-6)
    assert np.allclose(parallel_distances(Segment(D, C), Segment(Ev, B)), (1, 1, 1))
    mids = midpoint(Segment(D, C)), midpoint(Segment(Ev, B))
    assert abs(crossing_mesh_distance(*mids) - 1) < 1e-6


@pytest.mark.parametrize("tol", [1e-9, 1e-7, 1e-5, 1e-3])
def test_transitivity_failure_is_stable(tol):
    rep = check_TP(Segment(A, B), Segment(D, C), Segment(Ev, B), tol=tol)
    assert rep.violated and abs(rep.max_violation - SQRT2) < 1e-9


def test_tp_trivial_cases():
    s = Segment(A, B)
    assert not check_TP(s, s, s).violated
    L = LqSpace(2, 2)
    base = np.array([[0, 0], [1, 2]], float)
    segs = [Segment(L.point(base[0] + v), L.point(base[1] + v)) for v in ([0, 0], [3, 1], [-2, 5])]
    rep = check_TP(*segs)
    assert rep.applicable and rep.passed


def test_space_rules():
    for q in (1, 0.5, math.inf):
        with pytest.raises(ValueError):
            LqSpace(q, 2)
    with pytest.raises(SpaceMismatchError):
        distance(A, LqSpace(2, 2).point((0, 0)))
    with pytest.raises(ValueError):
        X.point("flap", (0.8, 0.8))
    assert X.point("flap", (0.5, 0.5)).chart == "square"


def test_npc_examples():
    L = LqSpace(2, 2)
    p = L.point
    assert check_NPC1(Segment(p((0, 0)), p((1, 0))), Segment(p((0, 1)), p((1, 1)))).passed
    rep = check_NPC3(Segment(p((0, 0)), p((1, 0))), Segment(p((1, 0)), p((2, 0))))
    assert rep.applicable and rep.passed
    rep = check_NPC3(Segment(p((0, 0)), p((1, 0))), Segment(p((1, 0)), p((1, 1))))
    assert not rep.applicable and rep.reason == "precondition unmet"
    with pytest.raises(ValueError):
        check_NPC3(Segment(p((0, 0)), p((1, 0))), Segment(p((2, 0)), p((3, 0))))


def test_non_geodesic_polyline_is_caught():
    rep = planted_npc1_counterexample()
    assert rep.violated
    L = LqSpace(2, 2)
    bent = polyline(L, [L.point((0, 0)), L.point((1, 5)), L.point((2, 0))])
    assert check_NPC1(bent, Segment(L.point((0, 1)), L.point((2, 1)))).violated


def test_parallel_perp_examples():
    L = LqSpace(2, 2)
    p = L.point
    assert is_parallel_perp(Segment(p((0, 0)), p((1, 0))), Segment(p((0, 1)), p((1, 1))))
    assert not is_parallel_perp(Segment(p((0, 0)), p((1, 0))), Segment(p((0.5, 1)), p((1.5, 1))))
    s = Segment(p((0, 0)), p((1, 3)))
    assert is_parallel_perp(s, s)


def lq_segments(d):
    coords = st.lists(st.floats(-10, 10), min_size=d, max_size=d)
    return st.tuples(st.sampled_from([1.5, 2.0, 3.0, 4.5]), coords, coords, coords, coords)


@given(lq_segments(3))
def test_parallel_reflexive_and_symmetric(data):
    q, a, b, c, d = data
    L = LqSpace(q, 3)
    s1 = Segment(L.point(a), L.point(b))
    s2 = Segment(L.point(c), L.point(d))
    assert is_parallel(s1, s1)
    assert is_parallel(s1, s2) == is_parallel(s2, s1)


def test_parallel_transitive_on_translates():
    rng = np.random.default_rng(3)
    for k in range(1000):
        q = (1.5, 2.0, 3.0)[k % 3]
        L = LqSpace(q, 3)
        x, y = rng.standard_normal(3), rng.standard_normal(3)
        segs = [Segment(L.point(x + v), L.point(y + v)) for v in rng.standard_normal((3, 3))]
        rep = check_TP(*segs)
        assert rep.applicable and rep.passed


@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
def test_common_start_forces_common_end(q):
    # solve for y' with [x, y] || [x, y']: the only solution is y' = y
    L = LqSpace(q, 2)
    rng = np.random.default_rng(4)
    for _ in range(5):
        x, y = rng.standard_normal(2), rng.standard_normal(2)
        s1 = Segment(L.point(x), L.point(y))

        def gap(v):
            a, b, c = parallel_distances(s1, Segment(L.point(x), L.point(v)))
            return max(abs(a - b), abs(a - c), abs(b - c))

        res = minimize(gap, y + rng.standard_normal(2), method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 5000})
        assert res.fun < 1e-9
        assert np.linalg.norm(res.x - y) < 1e-6


def test_parallelism_survives_isometries():
    rng = np.random.default_rng(5)
    L2 = LqSpace(2, 3)
    for k in range(50):
        Q = special_ortho_group.rvs(3, random_state=k)
        shift = rng.standard_normal(3)
        x, y, v = rng.standard_normal((3, 3))
        pts = [x, y, x + v, y + v] if k % 2 else list(rng.standard_normal((4, 3)))
        s1, s2 = Segment(L2.point(pts[0]), L2.point(pts[1])), Segment(L2.point(pts[2]), L2.point(pts[3]))
        t = [L2.point(Q @ p + shift) for p in pts]
        assert np.allclose(parallel_distances(s1, s2), parallel_distances(Segment(t[0], t[1]), Segment(t[2], t[3])))
        assert is_parallel(s1, s2, 1e-8) == is_parallel(Segment(t[0], t[1]), Segment(t[2], t[3]), 1e-8)
    for q in (1.5, 3.0):
        Lq = LqSpace(q, 3)
        for _ in range(50):
            perm, signs, shift = rng.permutation(3), rng.choice([-1.0, 1.0], 3), rng.standard_normal(3)
            pts = list(rng.standard_normal((4, 3)))
            f = lambda p: Lq.point(signs * p[perm] + shift)
            s1, s2 = Segment(Lq.point(pts[0]), Lq.point(pts[1])), Segment(Lq.point(pts[2]), Lq.point(pts[3]))
            assert np.allclose(parallel_distances(s1, s2), parallel_distances(Segment(f(pts[0]), f(pts[1])), Segment(f(pts[2]), f(pts[3]))))


@pytest.mark.parametrize("q,d", [(1.5, 2), (3.0, 3)])
def test_random_npc_batch_small(q, d):
    got = random_npc_batch(q, d, 200, np.random.default_rng(6))
    assert set(got) >= {"NPC1", "theta-NPC1", "NPC2", "NPC3"}
    for name, row in got.items():
        assert row["violations"] == 0, name
        assert row["applicable"] > 0, name


def test_theta_npc1_with_increasing_theta():
    L = LqSpace(3, 3)
    rng = np.random.default_rng(7)
    for _ in range(100):
        a, b, c, d = rng.standard_normal((4, 3))
        rep = check_theta_NPC1(Segment(L.point(a), L.point(b)), Segment(L.point(c), L.point(d)))
        assert rep.passed


def test_npc2_on_translates():
    L = LqSpace(3, 2)
    s1 = Segment(L.point((0, 0)), L.point((2, 1)))
    s2 = Segment(L.point((1, 1)), L.point((3, 2)))
    rep = check_NPC2(s1, s2)
    assert rep.applicable and rep.passed


def test_bundled_corpus():
    path = resources.files("fixlab") / "data" / "geometry_corpus.json"
    cases = json.loads(path.read_text())
    results = {c["id"]: run_case(c)[0] for c in cases}
    assert all(results.values()), [k for k, v in results.items() if not v]
