"""Geodesic predicates in l_q^d and in a small glued CAT(0) complex.

Parallelism of oriented segments: [x, y] || [x', y'] when
d(x, x') = d(y, y') = d(m(x, y), m(x', y')) with m the geodesic midpoint.

The glued complex is the unit square A=(0,0), B=(1,0), C=(1,1), D=(0,1)
with a second right-isosceles triangle E B D attached along the diagonal
BD.  Flap points use their own chart: the flap is drawn over the lower
triangle x + y <= 1 with E at the origin, B = (1, 0), D = (0, 1).  Each
piece is convex, so a geodesic between different pieces is a straight line
in the plane after unfolding one piece across BD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

DIAGONAL_EPS = 1e-12


class SpaceMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SpacePoint:
    space: object
    coords: tuple[float, ...]
    chart: str | None = None

    def array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


class LqSpace:
    """R^d with the l_q norm, 1 < q < inf (uniquely geodesic)."""

    def __init__(self, q: float, d: int):
        q = float(q)
        if not (q > 1) or math.isinf(q):
            raise ValueError("q must lie in (1, inf); q = 1 and q = inf are not uniquely geodesic")
        if d < 1:
            raise ValueError("dimension must be >= 1")
        self.q = q
        self.d = int(d)

    def __eq__(self, other):
        return isinstance(other, LqSpace) and (self.q, self.d) == (other.q, other.d)

    def __hash__(self):
        return hash(("lq", self.q, self.d))

    def __repr__(self):
        return f"LqSpace(q={self.q:g}, d={self.d})"

    def point(self, coords) -> SpacePoint:
        c = tuple(float(v) for v in coords)
        if len(c) != self.d or not all(math.isfinite(v) for v in c):
            raise ValueError(f"expected {self.d} finite coordinates")
        return SpacePoint(self, c)

    def norm(self, v: np.ndarray) -> float:
        return float(np.sum(np.abs(v) ** self.q) ** (1.0 / self.q))

    def distance(self, x: SpacePoint, y: SpacePoint) -> float:
        return self.norm(x.array() - y.array())

    def interpolate(self, x: SpacePoint, y: SpacePoint, t: float) -> SpacePoint:
        return SpacePoint(self, tuple((1 - t) * x.array() + t * y.array()))


def _reflect(v) -> np.ndarray:
    # reflection across the line x + y = 1; an involution fixing BD pointwise
    return np.array([1.0 - v[1], 1.0 - v[0]])


class GluedSquares:
    """Unit square with a flap triangle glued along the diagonal from B to D."""

    SQUARE = "square"
    FLAP = "flap"

    def __eq__(self, other):
        return isinstance(other, GluedSquares)

    def __hash__(self):
        return hash("glued-squares")

    def __repr__(self):
        return "GluedSquares()"

    def point(self, chart: str, xy) -> SpacePoint:
        x, y = (float(v) for v in xy)
        tol = 1e-12
        if chart == self.SQUARE:
            if not (-tol <= x <= 1 + tol and -tol <= y <= 1 + tol):
                raise ValueError("square point outside [0,1]^2")
        elif chart == self.FLAP:
            if not (x >= -tol and y >= -tol and x + y <= 1 + tol):
                raise ValueError("flap point outside its triangle")
            if abs(x + y - 1) <= DIAGONAL_EPS:
                # points on BD belong to both pieces; store them in the square chart
                chart = self.SQUARE
        else:
            raise ValueError(f"unknown chart {chart!r}")
        return SpacePoint(self, (x, y), chart)

    @property
    def vertices(self) -> dict[str, SpacePoint]:
        return {
            "A": self.point(self.SQUARE, (0, 0)),
            "B": self.point(self.SQUARE, (1, 0)),
            "C": self.point(self.SQUARE, (1, 1)),
            "D": self.point(self.SQUARE, (0, 1)),
            "E": self.point(self.FLAP, (0, 0)),
        }

    def _unfold(self, x: SpacePoint, y: SpacePoint) -> tuple[np.ndarray, np.ndarray]:
        """Planar positions of x and y on a common unfolded picture."""
        a, b = x.array(), y.array()
        if x.chart == y.chart:
            return a, b
        if x.chart == self.FLAP:
            b2, a2 = self._unfold(y, x)
            return a2, b2
        # x in the square, y in the flap: place the flap on the side of BD opposite x
        if a[0] + a[1] >= 1:
            return a, b
        return a, _reflect(b)

    def distance(self, x: SpacePoint, y: SpacePoint) -> float:
        a, b = self._unfold(x, y)
        return float(np.hypot(*(a - b)))

    def interpolate(self, x: SpacePoint, y: SpacePoint, t: float) -> SpacePoint:
        if x.chart == self.FLAP and y.chart == self.SQUARE:
            return self.interpolate(y, x, 1 - t)
        a, b = self._unfold(x, y)
        z = (1 - t) * a + t * b
        if x.chart == y.chart:
            return self.point(x.chart, np.clip(z, 0, 1))
        # x square, y flap: fold z back
        upper = a[0] + a[1] >= 1
        s = z[0] + z[1]
        same_side = s >= 1 if upper else s <= 1
        if same_side or abs(s - 1) <= DIAGONAL_EPS:
            return self.point(self.SQUARE, np.clip(z, 0, 1))
        flap = z if upper else _reflect(z)
        return self.point(self.FLAP, np.clip(flap, 0, 1))


def _check_same(*points: SpacePoint) -> None:
    sp = points[0].space
    for p in points[1:]:
        if p.space != sp:
            raise SpaceMismatchError("points belong to different spaces")


def distance(x: SpacePoint, y: SpacePoint) -> float:
    _check_same(x, y)
    return x.space.distance(x, y)


@dataclass(frozen=True)
class Segment:
    """Oriented segment; geodesic unless ``path`` overrides the parameterization."""

    start: SpacePoint
    end: SpacePoint
    path: Callable[[float], SpacePoint] | None = field(default=None, compare=False)

    def __post_init__(self):
        _check_same(self.start, self.end)

    @property
    def space(self):
        return self.start.space

    def reversed(self) -> Segment:
        if self.path is None:
            return Segment(self.end, self.start)
        return Segment(self.end, self.start, lambda t: self.path(1 - t))


def midpoint(seg: Segment, t: float = 0.5) -> SpacePoint:
    """The point dividing ``seg`` at ratio t : (1 - t) along its arc length."""
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    if seg.path is not None:
        return seg.path(t)
    if t == 0:
        return seg.start
    if t == 1:
        return seg.end
    return seg.space.interpolate(seg.start, seg.end, t)


def polyline(space, waypoints: list[SpacePoint]) -> Segment:
    """A non-geodesic path through ``waypoints``, parameterized by arc length (negative controls)."""
    lengths = [space.distance(a, b) for a, b in zip(waypoints, waypoints[1:])]
    total = sum(lengths)
    cum = np.concatenate([[0.0], np.cumsum(lengths)]) / total

    def path(t: float) -> SpacePoint:
        k = min(int(np.searchsorted(cum, t, side="right")) - 1, len(lengths) - 1)
        local = (t - cum[k]) / (cum[k + 1] - cum[k]) if cum[k + 1] > cum[k] else 0.0
        return space.interpolate(waypoints[k], waypoints[k + 1], local)

    return Segment(waypoints[0], waypoints[-1], path)


def parallel_distances(s1: Segment, s2: Segment) -> tuple[float, float, float]:
    _check_same(s1.start, s2.start)
    return (
        distance(s1.start, s2.start),
        distance(s1.end, s2.end),
        distance(midpoint(s1), midpoint(s2)),
    )


def is_parallel(s1: Segment, s2: Segment, tol: float = 1e-9) -> bool:
    a, b, c = parallel_distances(s1, s2)
    return abs(a - b) <= tol and abs(a - c) <= tol and abs(b - c) <= tol


@dataclass
class CheckReport:
    name: str
    applicable: bool
    passed: bool
    max_violation: float = 0.0
    detail: dict = field(default_factory=dict)
    reason: str = ""

    @property
    def violated(self) -> bool:
        return self.applicable and not self.passed


def check_TP(s1: Segment, s2: Segment, s3: Segment, tol: float = 1e-9) -> CheckReport:
    """Transitivity of parallelism on one triple."""
    p12, p23, p13 = is_parallel(s1, s2, tol), is_parallel(s2, s3, tol), is_parallel(s1, s3, tol)
    detail = {
        "12": parallel_distances(s1, s2),
        "23": parallel_distances(s2, s3),
        "13": parallel_distances(s1, s3),
        "parallel_12": p12,
        "parallel_23": p23,
        "parallel_13": p13,
    }
    if not (p12 and p23):
        return CheckReport("TP", False, True, 0.0, detail, "precondition unmet")
    a, b, c = detail["13"]
    gap = max(abs(a - b), abs(a - c), abs(b - c))
    return CheckReport("TP", True, p13, 0.0 if p13 else gap, detail, "" if p13 else "transitivity violated")


def _t_grid(t_samples) -> np.ndarray:
    if isinstance(t_samples, int):
        return np.linspace(0.0, 1.0, t_samples)
    return np.asarray(t_samples, dtype=float)


def check_theta_NPC1(
    s1: Segment,
    s2: Segment,
    t_samples=11,
    theta: Callable[[float], float] | None = None,
    tol: float = 1e-9,
) -> CheckReport:
    """theta(d(m_t, m'_t)) <= (1 - t) theta(d(x, x')) + t theta(d(y, y')) at each sampled t.

    ``theta`` defaults to the identity; it must be strictly increasing and continuous.
    """
    theta = theta or (lambda r: r)
    dx = theta(distance(s1.start, s2.start))
    dy = theta(distance(s1.end, s2.end))
    worst = 0.0
    for t in _t_grid(t_samples):
        lhs = theta(distance(midpoint(s1, t), midpoint(s2, t)))
        worst = max(worst, lhs - ((1 - t) * dx + t * dy))
    return CheckReport("theta-NPC1", True, worst <= tol, max(worst, 0.0))


def check_NPC1(s1: Segment, s2: Segment, t_samples=11, tol: float = 1e-9) -> CheckReport:
    """When d(x, x') = d(y, y'): d(m_t, m'_t) <= d(x, x') for sampled t."""
    dx = distance(s1.start, s2.start)
    dy = distance(s1.end, s2.end)
    if abs(dx - dy) > tol:
        return CheckReport("NPC1", False, True, reason="precondition unmet")
    worst = 0.0
    for t in _t_grid(t_samples):
        worst = max(worst, distance(midpoint(s1, t), midpoint(s2, t)) - dx)
    return CheckReport("NPC1", True, worst <= tol, max(worst, 0.0))


def check_NPC2(s1: Segment, s2: Segment, tol: float = 1e-9) -> CheckReport:
    """If [x, y] || [x', y'] then [x, x'] || [y, y']."""
    if not is_parallel(s1, s2, tol):
        return CheckReport("NPC2", False, True, reason="precondition unmet")
    t1 = Segment(s1.start, s2.start)
    t2 = Segment(s1.end, s2.end)
    a, b, c = parallel_distances(t1, t2)
    gap = max(abs(a - b), abs(a - c), abs(b - c))
    return CheckReport("NPC2", True, gap <= tol, gap)


def check_NPC3(s1: Segment, s2: Segment, tol: float = 1e-9) -> CheckReport:
    """For s1 = [x, y], s2 = [y, z]: if s1 || s2 then d(x, z) = d(x, y) + d(y, z)."""
    if distance(s1.end, s2.start) > tol:
        raise ValueError("NPC3 needs s1.end == s2.start")
    if not is_parallel(s1, s2, tol):
        return CheckReport("NPC3", False, True, reason="precondition unmet")
    x, y, z = s1.start, s1.end, s2.end
    gap = abs(distance(x, z) - distance(x, y) - distance(y, z))
    return CheckReport("NPC3", True, gap <= tol, gap)


def _bounded_min(fun, lo: float, hi: float, xtol: float) -> tuple[float, float]:
    res = minimize_scalar(fun, bounds=(lo, hi), method="bounded", options={"xatol": xtol})
    return float(res.x), float(res.fun)


def segment_distance(s1: Segment, s2: Segment, samples: int = 64, rounds: int = 6, xtol: float = 1e-12) -> float:
    """min over (s, t) of d(m_s(s1), m_t(s2)): grid search, then alternating 1-d refinement."""
    grid = np.linspace(0.0, 1.0, samples)
    P = [midpoint(s1, s) for s in grid]
    Q = [midpoint(s2, t) for t in grid]
    D = np.array([[distance(p, q) for q in Q] for p in P])
    i, j = np.unravel_index(np.argmin(D), D.shape)
    s, t, best = grid[i], grid[j], float(D[i, j])
    h = 1.0 / (samples - 1)
    for _ in range(rounds):
        s, _ = _bounded_min(lambda u: distance(midpoint(s1, u), midpoint(s2, t)), max(0.0, s - h), min(1.0, s + h), xtol)
        t, val = _bounded_min(lambda u: distance(midpoint(s1, s), midpoint(s2, u)), max(0.0, t - h), min(1.0, t + h), xtol)
        best = min(best, val)
    return best


def is_parallel_perp(s1: Segment, s2: Segment, tol: float = 1e-9) -> bool:
    """Parallel, and the start-to-start distance realizes the distance between the segments."""
    if not is_parallel(s1, s2, tol):
        return False
    return distance(s1.start, s2.start) <= segment_distance(s1, s2) + tol


# ---------------------------------------------------------------------------
# corpus files


def _parse_space(spec: dict):
    kind = spec.get("type")
    if kind == "lq":
        return LqSpace(spec["q"], spec["d"])
    if kind == "glued":
        return GluedSquares()
    raise ValueError(f"unknown space type {kind!r}")


def _parse_point(space, spec) -> SpacePoint:
    if isinstance(space, GluedSquares):
        if isinstance(spec, str):
            return space.vertices[spec]
        return space.point(spec["chart"], spec["xy"])
    return space.point(spec)


def _parse_segment(space, spec) -> Segment:
    if isinstance(spec, dict) and "polyline" in spec:
        return polyline(space, [_parse_point(space, p) for p in spec["polyline"]])
    a, b = spec
    return Segment(_parse_point(space, a), _parse_point(space, b))


def run_case(case: dict, seed: int = 0) -> tuple[bool, dict]:
    """Evaluate one corpus case; returns (verdict matches expectation, observed).

    ``seed`` is used by randomized checks that do not carry their own.
    """
    space = _parse_space(case["space"])
    tol = float(case.get("tol", 1e-9))
    kind = case["check"]
    segs = [_parse_segment(space, s) for s in case.get("segments", [])]
    expected = case["expected"]
    if kind == "distance":
        x, y = (_parse_point(space, p) for p in case["points"])
        val = distance(x, y)
        return abs(val - float(expected)) <= tol, {"distance": val}
    if kind == "parallel":
        got = is_parallel(*segs, tol=tol)
        return got == expected, {"parallel": got, "distances": parallel_distances(*segs)}
    if kind == "parallel_perp":
        got = is_parallel_perp(*segs, tol=tol)
        return got == expected, {"parallel_perp": got}
    if kind == "npc_batch":
        rng = np.random.default_rng(case.get("seed", seed))
        got = random_npc_batch(space.q, space.d, int(case.get("trials", 1000)), rng, tol)
        total = sum(v["violations"] for v in got.values())
        return (total == 0) == (expected == "holds"), got
    checks = {
        "TP": lambda: check_TP(*segs, tol=tol),
        "NPC1": lambda: check_NPC1(*segs, t_samples=case.get("t_samples", 11), tol=tol),
        "theta-NPC1": lambda: check_theta_NPC1(*segs, t_samples=case.get("t_samples", 11), tol=tol),
        "NPC2": lambda: check_NPC2(*segs, tol=tol),
        "NPC3": lambda: check_NPC3(*segs, tol=tol),
    }
    if kind not in checks:
        raise ValueError(f"unknown check {kind!r}")
    rep = checks[kind]()
    verdict = "precondition unmet" if not rep.applicable else ("holds" if rep.passed else "violated")
    return verdict == expected, {"verdict": verdict, "max_violation": rep.max_violation}


def _random_equal_offset(space: LqSpace, a: np.ndarray, rng) -> np.ndarray:
    w = rng.standard_normal(space.d)
    return w * (space.norm(a) / space.norm(w))


def random_npc_batch(q: float, d: int, trials: int, rng, tol: float = 1e-9, t_samples: int = 11) -> dict:
    """Random NPC checks in l_q^d; returns violation and applicability counts per predicate.

    NPC1 pairs are drawn with d(x, x') = d(y, y'); NPC2 pairs are translates
    (the only parallel pairs in a strictly convex normed space); NPC3 uses
    z = 2y - x so that [x, y] || [y, z].
    """
    X = LqSpace(q, d)
    out = {k: {"applicable": 0, "violations": 0, "max_violation": 0.0} for k in ("NPC1", "theta-NPC1", "NPC2", "NPC3")}

    def record(rep: CheckReport):
        slot = out[rep.name]
        slot["applicable"] += int(rep.applicable)
        slot["violations"] += int(rep.violated)
        slot["max_violation"] = max(slot["max_violation"], rep.max_violation)

    for _ in range(trials):
        x, y, a = (rng.standard_normal(d) for _ in range(3))
        s1 = Segment(X.point(x), X.point(y))
        b = _random_equal_offset(X, a, rng)
        record(check_NPC1(s1, Segment(X.point(x + a), X.point(y + b)), t_samples, tol))
        u, v = rng.standard_normal(d), rng.standard_normal(d)
        record(check_theta_NPC1(s1, Segment(X.point(u), X.point(v)), t_samples, tol=tol))
        record(check_NPC2(s1, Segment(X.point(x + a), X.point(y + a)), tol))
        record(check_NPC3(s1, Segment(X.point(y), X.point(2 * y - x)), tol))
    return out


def planted_npc1_counterexample() -> CheckReport:
    """NPC1 on a detour polyline against a straight translate; must be reported as violated."""
    X = LqSpace(2, 2)
    bent = polyline(X, [X.point([0, 0]), X.point([1, 5]), X.point([2, 0])])
    straight = Segment(X.point([0, 1]), X.point([2, 1]))
    return check_NPC1(bent, straight)
