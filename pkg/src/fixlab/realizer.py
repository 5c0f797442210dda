"""Affine isometric actions on Euclidean space and their fixed-point geometry.

An action is alpha(g) x = pi(g) x + b(g) with pi orthogonal and b a cocycle,
b(g h) = b(g) + pi(g) b(h).  It is given on generators and extended to words
by left-to-right folding.  For a finite matrix group the extension to every
element is tabulated once; every Cayley edge is checked, so a cocycle that
violates some relation of the group is rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .algebra import MatrixOverFp, elementary_matrix, mat_inv, mat_mul, permutation_matrix
from .geometry import LqSpace, Segment, is_parallel, parallel_distances
from .groups import FiniteMatrixGroup, SubgroupHandle, closure

ORTHO_TOL = 1e-10
CHECK_TOL = 1e-8
SOLVE_TOL = 1e-10
TABLE_LIMIT = 100_000

HYPOTHESIS_NOTE = "G is finite, so G^abel is finite and Q^abel is torsion; this does not cover infinite groups"


class InconsistentCocycleError(ValueError):
    pass


class EmptyFixedSetError(ValueError):
    pass


def _parse_token(tok: str) -> tuple[str, int]:
    if tok.endswith("^-1"):
        return tok[:-3], -1
    return tok, 1


class AffineAction:
    """Affine isometric action given by (linear, cocycle) on labeled generators.

    ``group`` may be None for an action of the free group on the labels; then
    only words can be evaluated.  Otherwise ``elements`` lists the group
    element of each label, in the same order as ``labels``.
    """

    def __init__(
        self,
        labels: Sequence[str],
        linear: Sequence,
        cocycle: Sequence,
        group: FiniteMatrixGroup | None = None,
        elements: Sequence[MatrixOverFp] | None = None,
        name: str = "",
    ):
        self.labels = list(labels)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("generator labels must be distinct")
        self.linear = {k: np.asarray(a, dtype=float) for k, a in zip(self.labels, linear)}
        self.cocycle = {k: np.asarray(v, dtype=float).ravel() for k, v in zip(self.labels, cocycle)}
        if len(self.linear) != len(self.labels) or len(self.cocycle) != len(self.labels):
            raise ValueError("one linear part and one cocycle value per generator")
        dims = {a.shape for a in self.linear.values()} | {(v.size, v.size) for v in self.cocycle.values()}
        if len(dims) != 1:
            raise ValueError("linear parts and cocycle values must share one dimension")
        self.dim = next(iter(dims))[0]
        for k, a in self.linear.items():
            if np.max(np.abs(a.T @ a - np.eye(self.dim))) > ORTHO_TOL:
                raise ValueError(f"linear part of {k} is not orthogonal")
        self.name = name
        self.group = group
        self.elements = list(elements) if elements is not None else None
        self._table: dict[MatrixOverFp, tuple[np.ndarray, np.ndarray]] | None = None
        if group is not None:
            if self.elements is None or len(self.elements) != len(self.labels):
                raise ValueError("a finite action needs one group element per label")
            self._build_table()

    # -- evaluation ---------------------------------------------------------

    def _build_table(self) -> None:
        G = self.group
        if G.order > TABLE_LIMIT:
            raise ValueError(f"group of order {G.order} is too large to tabulate")
        ident = G.identity
        table = {ident: (np.eye(self.dim), np.zeros(self.dim))}
        frontier = [ident]
        steps = [(self.elements[k], self.linear[lab], self.cocycle[lab], lab) for k, lab in enumerate(self.labels)]
        while frontier:
            nxt = []
            for g in frontier:
                P, c = table[g]
                for s, L, b, lab in steps:
                    h = mat_mul(g, s)
                    val = (P @ L, c + P @ b)
                    if h in table:
                        Q, d = table[h]
                        err = max(np.max(np.abs(Q - val[0])), np.max(np.abs(d - val[1])))
                        if err > CHECK_TOL:
                            raise InconsistentCocycleError(
                                f"action is not well defined: two words for the same element differ by {err:.3g} (last step {lab})"
                            )
                    else:
                        table[h] = val
                        nxt.append(h)
            frontier = nxt
        if len(table) != G.order:
            raise InconsistentCocycleError("generator elements do not generate the group")
        self._table = table

    def extend_cocycle(self, word) -> tuple[np.ndarray, np.ndarray]:
        """(pi(g), b(g)) for the product of a word of labels; ``"a^-1"`` is an inverse letter."""
        if isinstance(word, str):
            word = word.split()
        P = np.eye(self.dim)
        c = np.zeros(self.dim)
        for tok in word:
            lab, sign = _parse_token(tok)
            if lab not in self.linear:
                raise KeyError(f"unknown generator {lab!r}")
            L, b = self.linear[lab], self.cocycle[lab]
            if sign == -1:
                L, b = L.T, -(L.T @ b)
            c = c + P @ b
            P = P @ L
        return P, c

    def element(self, g) -> tuple[np.ndarray, np.ndarray]:
        """(pi(g), b(g)) for a group element, a word, or a label."""
        if isinstance(g, MatrixOverFp):
            if self._table is None:
                raise ValueError("elements can only be evaluated for a finite group action")
            if g not in self._table:
                raise KeyError("element is not in the acting group")
            return self._table[g]
        if isinstance(g, str):
            return self.extend_cocycle([g])
        if isinstance(g, tuple) and len(g) == 2 and isinstance(g[0], np.ndarray):
            return g
        return self.extend_cocycle(list(g))

    def apply(self, g, x) -> np.ndarray:
        P, c = self.element(g)
        return P @ np.asarray(x, dtype=float) + c

    def group_generators(self) -> list:
        return list(self.elements) if self.elements is not None else list(self.labels)

    def all_elements(self) -> list[MatrixOverFp]:
        if self._table is None:
            raise ValueError("free action has no finite element list")
        return list(self._table)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "group_ref": self.group.name if self.group is not None else None,
            "group": self.group.to_json() if self.group is not None else None,
            "dim": self.dim,
            "generators": [
                {
                    "label": lab,
                    "element": self.elements[k].to_json() if self.elements is not None else None,
                    "linear": self.linear[lab].tolist(),
                    "cocycle": self.cocycle[lab].tolist(),
                }
                for k, lab in enumerate(self.labels)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> AffineAction:
        gens = obj["generators"]
        group = None
        elements = None
        if obj.get("group"):
            g = obj["group"]
            group = FiniteMatrixGroup([MatrixOverFp.from_json(m) for m in g["generators"]], name=g.get("id"))
            elements = [MatrixOverFp.from_json(s["element"]) for s in gens]
        return cls(
            [s["label"] for s in gens],
            [s["linear"] for s in gens],
            [s["cocycle"] for s in gens],
            group,
            elements,
            obj.get("name", ""),
        )


def extend_cocycle(action: AffineAction, word) -> tuple[np.ndarray, np.ndarray]:
    return action.extend_cocycle(word)


def compose(first: tuple[np.ndarray, np.ndarray], second: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """(pi, b) of the product g h from (pi(g), b(g)) and (pi(h), b(h))."""
    P, c = first
    Q, d = second
    return P @ Q, c + P @ d


# ---------------------------------------------------------------------------
# fixed sets


@dataclass
class AffineFixedSet:
    """base + span(directions); ``empty`` when the system has no solution."""

    base: np.ndarray | None
    directions: np.ndarray
    empty: bool = False
    residual: float = 0.0
    alarm: bool = False

    @property
    def dim(self) -> int:
        return -1 if self.empty else self.directions.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.directions.shape[0]

    def project(self, x) -> np.ndarray:
        if self.empty:
            raise EmptyFixedSetError("fixed set is empty")
        U = self.directions
        x = np.asarray(x, dtype=float)
        return self.base + U @ (U.T @ (x - self.base))

    def distance_to(self, x) -> float:
        return float(np.linalg.norm(np.asarray(x, dtype=float) - self.project(x)))

    def contains(self, x, tol: float = CHECK_TOL) -> bool:
        return not self.empty and self.distance_to(x) <= tol


def _affine_solution(rows: list[np.ndarray], rhs: list[np.ndarray], d: int) -> AffineFixedSet:
    if not rows:
        return AffineFixedSet(np.zeros(d), np.eye(d))
    A = np.vstack(rows)
    y = np.concatenate(rhs)
    x, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.max(np.abs(A @ x - y))) if y.size else 0.0
    scale = max(1.0, float(np.max(np.abs(y))) if y.size else 1.0)
    if res > SOLVE_TOL * 100 * scale:
        return AffineFixedSet(None, np.zeros((d, 0)), True, res)
    U = scipy.linalg.null_space(A, rcond=1e-10)
    # min-norm base point is orthogonal to the directions already; clean it up
    x = x - U @ (U.T @ x)
    return AffineFixedSet(x, U, False, res)


def fixed_set(action: AffineAction, H) -> AffineFixedSet:
    """Points fixed by every generator of H: solve (pi(s) - I) x = -b(s).

    H may be a SubgroupHandle of the acting group, or a list of words/labels.
    For a finite group an empty answer sets ``alarm``: finite groups always
    fix the barycenter of an orbit.
    """
    if isinstance(H, SubgroupHandle):
        gens = list(H.generators)
    else:
        gens = list(H)
    rows, rhs = [], []
    for s in gens:
        P, c = action.element(s)
        rows.append(P - np.eye(action.dim))
        rhs.append(-c)
    out = _affine_solution(rows, rhs, action.dim)
    if out.empty and action.group is not None:
        out.alarm = True
    return out


def affine_subspace(base, directions) -> AffineFixedSet:
    """An affine subspace given directly (orthonormalized)."""
    base = np.asarray(base, dtype=float)
    D = np.asarray(directions, dtype=float).reshape(base.size, -1)
    U = scipy.linalg.orth(D) if D.shape[1] else np.zeros((base.size, 0))
    b = base - U @ (U.T @ base)
    return AffineFixedSet(b, U)


# ---------------------------------------------------------------------------
# realizers


@dataclass
class RealizerTuple:
    points: list[np.ndarray]
    value: float
    objective: str  # "distance" or "energy"
    unique: bool = True
    fixed_sets: list[AffineFixedSet] | None = field(default=None, repr=False)
    gradient_norm: float = 0.0

    def recompute(self) -> float:
        if self.objective == "distance":
            return float(np.linalg.norm(self.points[0] - self.points[1]))
        return theta_energy(self.points)

    def to_json(self) -> dict:
        return {
            "points": [p.tolist() for p in self.points],
            "value": self.value,
            "objective": self.objective,
            "unique": self.unique,
        }


def theta_energy(points, theta=None) -> float:
    """sum_{i<j} theta(|z_i - z_j|)^2; theta is the identity by default."""
    theta = theta or (lambda r: r)
    total = 0.0
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            total += theta(float(np.linalg.norm(np.asarray(points[i]) - np.asarray(points[j])))) ** 2
    return total


def _key(F: AffineFixedSet) -> bytes:
    return np.round(F.base, 12).tobytes() + np.round(F.directions, 12).tobytes()


def realize_distance(F1: AffineFixedSet, F2: AffineFixedSet) -> RealizerTuple:
    """Closest pair between two affine subspaces, minimum-norm when not unique."""
    if F1.empty or F2.empty:
        raise EmptyFixedSetError("realize_distance needs two nonempty sets")
    if _key(F2) < _key(F1):
        # solve in a canonical order so swapping the inputs swaps the output exactly
        r = realize_distance(F2, F1)
        return RealizerTuple(r.points[::-1], r.value, "distance", r.unique, [F1, F2])
    U1, U2 = F1.directions, F2.directions
    A = np.hstack([U1, -U2])
    rhs = F2.base - F1.base
    if A.shape[1]:
        sol, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    else:
        sol, rank = np.zeros(0), 0
    k = U1.shape[1]
    xi = F1.base + U1 @ sol[:k]
    eta = F2.base + U2 @ sol[k:]
    unique = rank == A.shape[1]
    return RealizerTuple([xi, eta], float(np.linalg.norm(xi - eta)), "distance", bool(unique), [F1, F2])


def minimize_theta_energy(fixed_sets: Sequence[AffineFixedSet], method: str = "lstsq", tol: float = 1e-10, max_iter: int = 100_000) -> RealizerTuple:
    """Minimize sum_{i<j} |z_i - z_j|^2 with z_i in fixed_sets[i] (theta = identity).

    ``lstsq`` solves the convex quadratic directly in subspace coordinates
    (minimum-norm when the minimizer is not unique); ``bcd`` runs block
    coordinate descent, each block step projecting the mean of the others.
    """
    sets = list(fixed_sets)
    if any(F.empty for F in sets):
        raise EmptyFixedSetError("every fixed set must be nonempty")
    l = len(sets)
    d = sets[0].ambient_dim
    ks = [F.directions.shape[1] for F in sets]
    offs = np.concatenate([[0], np.cumsum(ks)])
    unique = True
    if method == "lstsq":
        rows, rhs = [], []
        for i in range(l):
            for j in range(i + 1, l):
                row = np.zeros((d, offs[-1]))
                row[:, offs[i] : offs[i + 1]] = sets[i].directions
                row[:, offs[j] : offs[j + 1]] = -sets[j].directions
                rows.append(row)
                rhs.append(sets[j].base - sets[i].base)
        if offs[-1] and rows:
            A = np.vstack(rows)
            u, _, rank, _ = np.linalg.lstsq(A, np.concatenate(rhs), rcond=None)
            unique = rank == A.shape[1]
        else:
            u = np.zeros(offs[-1])
        z = [sets[i].base + sets[i].directions @ u[offs[i] : offs[i + 1]] for i in range(l)]
    elif method == "bcd":
        z = [F.base.copy() for F in sets]
        for _ in range(max_iter):
            for i in range(l):
                others = [z[j] for j in range(l) if j != i]
                z[i] = sets[i].project(np.mean(others, axis=0))
            if _energy_grad_norm(z, sets) <= tol:
                break
        unique = None
    else:
        raise ValueError("method must be 'lstsq' or 'bcd'")
    return RealizerTuple(z, theta_energy(z), "energy", unique, sets, _energy_grad_norm(z, sets))


def _energy_grad_norm(z, sets) -> float:
    l = len(z)
    total = 0.0
    for i in range(l):
        g = sum(2 * (z[i] - z[j]) for j in range(l) if j != i)
        total += float(np.sum((sets[i].directions.T @ g) ** 2))
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# checks


@dataclass
class Report:
    name: str
    passed: bool
    precondition: bool = True
    residuals: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    reason: str = ""

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "precondition": self.precondition,
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "notes": self.notes,
            "reason": self.reason,
        }


def _pi_fixed_residual(action: AffineAction, v: np.ndarray) -> float:
    worst = 0.0
    for s in action.group_generators():
        P, _ = action.element(s)
        worst = max(worst, float(np.max(np.abs(P @ v - v))) if v.size else 0.0)
    return worst


def check_pseudo_uniqueness(action: AffineAction, M, L, pair1, pair2, tol: float = CHECK_TOL) -> Report:
    """Two realizers (xi, eta), (xi', eta') of dist(Fix M, Fix L): xi - xi' = eta - eta' is pi(G)-fixed."""
    FM, FL = fixed_set(action, M), fixed_set(action, L)
    D = realize_distance(FM, FL).value
    bad = []
    for k, (xi, eta) in enumerate((pair1, pair2), start=1):
        xi, eta = np.asarray(xi, float), np.asarray(eta, float)
        if not FM.contains(xi, tol) or not FL.contains(eta, tol):
            bad.append(f"pair {k} is not in Fix(M) x Fix(L)")
        elif abs(np.linalg.norm(xi - eta) - D) > tol:
            bad.append(f"pair {k} does not realize D = {D:.6g}")
    if bad:
        return Report("pseudo-uniqueness", False, False, {"D": D}, reason="precondition failure: " + "; ".join(bad))
    d1 = np.asarray(pair1[0], float) - np.asarray(pair2[0], float)
    d2 = np.asarray(pair1[1], float) - np.asarray(pair2[1], float)
    eq = float(np.max(np.abs(d1 - d2))) if d1.size else 0.0
    fix = _pi_fixed_residual(action, d1)
    return Report("pseudo-uniqueness", eq <= tol and fix <= tol, True, {"D": D, "difference_gap": eq, "pi_fixed_residual": fix})


def check_realizer_parallelism(tuple1: RealizerTuple, tuple2: RealizerTuple, tol: float = CHECK_TOL) -> Report:
    """For two energy minimizers, [x_i, y_i] || [x_j, y_j] for all i < j."""
    e1, e2 = tuple1.recompute(), tuple2.recompute()
    notes = []
    if len(tuple1.points) != len(tuple2.points):
        return Report("energy-parallelism", False, False, reason="precondition failure: tuples differ in length")
    sets = tuple1.fixed_sets or tuple2.fixed_sets
    if sets is not None:
        for k, (a, b) in enumerate(zip(tuple1.points, tuple2.points)):
            if not sets[k].contains(a, tol) or not sets[k].contains(b, tol):
                return Report("energy-parallelism", False, False, reason=f"precondition failure: point {k + 1} outside its fixed set")
        best = minimize_theta_energy(sets).value
        if min(e1, e2) < best - tol:
            notes.append("supplied tuple beats the solver minimum")
        e_ref = best
    else:
        e_ref = min(e1, e2)
    if abs(e1 - e_ref) > tol or abs(e2 - e_ref) > tol:
        return Report("energy-parallelism", False, False, {"energy_1": e1, "energy_2": e2}, reason="precondition failure: not both minimizers")
    d = tuple1.points[0].size
    X = LqSpace(2, d)
    segs = [Segment(X.point(a), X.point(b)) for a, b in zip(tuple1.points, tuple2.points)]
    worst = 0.0
    ok = True
    for i in range(len(segs)):
        for j in range(i + 1, len(segs)):
            ok &= is_parallel(segs[i], segs[j], tol)
            a, b, c = parallel_distances(segs[i], segs[j])
            worst = max(worst, abs(a - b), abs(a - c), abs(b - c))
    return Report("energy-parallelism", bool(ok), True, {"energy_1": e1, "energy_2": e2, "max_parallel_gap": worst}, notes)


def _containment_witness(h: MatrixOverFp, H: SubgroupHandle, target: SubgroupHandle) -> MatrixOverFp | None:
    hinv = mat_inv(h)
    for m in target.generators:
        if mat_mul(mat_mul(hinv, m), h) not in H:
            return m
    return None


def self_improvement_check(
    action: AffineAction,
    M: SubgroupHandle,
    L: SubgroupHandle,
    H1: SubgroupHandle,
    H2: SubgroupHandle,
    P: Sequence[MatrixOverFp],
    realizer: RealizerTuple | tuple | None = None,
    samples: int = 200,
    seed: int = 0,
    tol: float = CHECK_TOL,
) -> Report:
    """Verify the type (I) self-improvement conclusions for one finite action.

    (a) [x, g x] || [gamma x, gamma g x] for sampled g in <P>, gamma in G
        (and likewise for y);
    (b) alpha(h) fixes x and y for every h in P;
    (c) alpha(g1 g2) x = alpha(g2 g1) x for sampled g1, g2 in <P>.
    Preconditions (realizer validity, x in Fix H1, y in Fix H2, and
    h H1 h^-1 >= M, h H2 h^-1 >= L) are checked first; failures refuse
    certification.
    """
    if action.group is None:
        raise ValueError("self-improvement check needs a finite acting group")
    FM, FL = fixed_set(action, M), fixed_set(action, L)
    if realizer is None:
        realizer = realize_distance(FM, FL)
    pts = realizer.points if isinstance(realizer, RealizerTuple) else list(realizer)
    x, y = (np.asarray(p, dtype=float) for p in pts)
    unmet = []
    D = realize_distance(FM, FL).value
    if not FM.contains(x, tol) or not FL.contains(y, tol) or abs(np.linalg.norm(x - y) - D) > tol:
        unmet.append("(x, y) does not realize dist(Fix M, Fix L)")
    if not fixed_set(action, H1).contains(x, tol):
        unmet.append("x is not fixed by H1")
    if not fixed_set(action, H2).contains(y, tol):
        unmet.append("y is not fixed by H2")
    witnesses = {}
    for k, h in enumerate(P):
        w1 = _containment_witness(h, H1, M)
        w2 = _containment_witness(h, H2, L)
        if w1 is not None:
            unmet.append(f"P[{k}] H1 P[{k}]^-1 does not contain M")
            witnesses[f"P[{k}]:M"] = w1.to_json()
        if w2 is not None:
            unmet.append(f"P[{k}] H2 P[{k}]^-1 does not contain L")
            witnesses[f"P[{k}]:L"] = w2.to_json()
    if unmet:
        rep = Report("self-improvement", False, False, reason="precondition unmet: " + "; ".join(unmet))
        rep.notes.append(json.dumps(witnesses, sort_keys=True))
        return rep

    rng = np.random.default_rng(seed)
    Q = closure(list(P), cap=TABLE_LIMIT) if P else None
    Q_elems = list(Q.matrices()) if Q is not None else [action.group.identity]
    G_elems = action.all_elements()
    X = LqSpace(2, action.dim)
    worst_par = 0.0
    par_ok = True
    n = min(samples, len(Q_elems) * len(G_elems))
    for _ in range(n):
        g = Q_elems[rng.integers(len(Q_elems))]
        gamma = G_elems[rng.integers(len(G_elems))]
        for z in (x, y):
            s1 = Segment(X.point(z), X.point(action.apply(g, z)))
            s2 = Segment(X.point(action.apply(gamma, z)), X.point(action.apply(mat_mul(gamma, g), z)))
            a, b, c = parallel_distances(s1, s2)
            worst_par = max(worst_par, abs(a - b), abs(a - c), abs(b - c))
            par_ok &= is_parallel(s1, s2, tol)
    worst_fix = 0.0
    for h in P:
        for z in (x, y):
            worst_fix = max(worst_fix, float(np.linalg.norm(action.apply(h, z) - z)))
    worst_ab = 0.0
    for _ in range(n):
        g1 = Q_elems[rng.integers(len(Q_elems))]
        g2 = Q_elems[rng.integers(len(Q_elems))]
        for z in (x, y):
            worst_ab = max(worst_ab, float(np.linalg.norm(action.apply(mat_mul(g1, g2), z) - action.apply(mat_mul(g2, g1), z))))
    passed = par_ok and worst_fix <= tol and worst_ab <= tol
    rep = Report(
        "self-improvement",
        bool(passed),
        True,
        {"orbit_parallel_gap": worst_par, "P_fixed_residual": worst_fix, "abelianization_residual": worst_ab, "D": D},
        [HYPOTHESIS_NOTE],
    )
    if D <= tol:
        rep.notes.append("D = 0: the realizer is a common fixed point of M and L")
    return rep


@dataclass
class DisplacementReport:
    point: np.ndarray
    generators: list
    value: float
    per_generator: list[float]
    fixed: bool
    one_uniform_at_point: bool
    note: str = "1-uniformity is evaluated at this point only; the global property is not decided"


def displacement(action: AffineAction, S: Sequence, z, tol: float = CHECK_TOL) -> DisplacementReport:
    """max over s in S of |alpha(s) z - z|."""
    z = np.asarray(z, dtype=float)
    vals = [float(np.linalg.norm(action.apply(s, z) - z)) for s in S]
    value = max(vals) if vals else 0.0
    return DisplacementReport(z, list(S), value, vals, value <= tol, value >= 1.0)


class ThetaEnergyRealizer(BaseEstimator):
    """Estimator wrapper: ``fit(fixed_sets)`` stores ``points_``, ``energy_``, ``unique_``."""

    def __init__(self, method: str = "lstsq", tol: float = 1e-10):
        self.method = method
        self.tol = tol

    def fit(self, X: Sequence[AffineFixedSet], y=None):
        r = minimize_theta_energy(X, method=self.method, tol=self.tol)
        self.points_ = r.points
        self.energy_ = r.value
        self.unique_ = r.unique
        self.gradient_norm_ = r.gradient_norm
        return self

    def transform(self, X: Sequence[AffineFixedSet]) -> np.ndarray:
        check_is_fitted(self, "points_")
        return np.vstack(self.points_)


# ---------------------------------------------------------------------------
# bundled scenarios


def _reflection(angle: float) -> np.ndarray:
    c, s = math.cos(2 * angle), math.sin(2 * angle)
    return np.array([[c, s], [s, -c]])


def d3_action(cocycle: str = "trivial", v=(0.3, -0.7)) -> AffineAction:
    """Sym(3) = <a, b> as permutation matrices, acting on R^2 by mirror reflections.

    a = (1 2) reflects across the x-axis, b = (2 3) across the line at 60 degrees.
    ``cocycle="coboundary"`` uses b(g) = v - pi(g) v, which fixes v.
    """
    a = permutation_matrix([1, 0, 2], 2)
    b = permutation_matrix([0, 2, 1], 2)
    G = FiniteMatrixGroup([a, b], name="Sym(3)")
    La, Lb = _reflection(0.0), _reflection(math.pi / 3)
    v = np.asarray(v, dtype=float)
    if cocycle == "trivial":
        ca, cb = np.zeros(2), np.zeros(2)
    elif cocycle == "coboundary":
        ca, cb = v - La @ v, v - Lb @ v
    else:
        raise ValueError("cocycle must be 'trivial' or 'coboundary'")
    return AffineAction(["a", "b"], [La, Lb], [ca, cb], G, [a, b], name=f"d3-{cocycle}")


def sym3_permutation_action() -> AffineAction:
    """Sym(3) permuting the coordinates of R^3, trivial cocycle."""
    a = permutation_matrix([1, 0, 2], 2)
    b = permutation_matrix([0, 2, 1], 2)
    G = FiniteMatrixGroup([a, b], name="Sym(3)")
    return AffineAction(["a", "b"], [a.array.astype(float), b.array.astype(float)], [np.zeros(3), np.zeros(3)], G, [a, b], name="sym3-perm")


def _points_f2(n: int) -> list[tuple[int, ...]]:
    return [v for v in np.ndindex(*(2,) * n) if any(v)]


def sl3f2_points_action(seed: int = 7) -> AffineAction:
    """SL(3, F_2) permuting the 7 nonzero vectors of F_2^3, with a random coboundary."""
    n, p = 3, 2
    gens = [elementary_matrix(n, i, j, 1, p) for i in range(1, n + 1) for j in range(1, n + 1) if i != j]
    G = FiniteMatrixGroup(gens, name="SL(3,F_2)")
    pts = _points_f2(n)
    index = {v: k for k, v in enumerate(pts)}
    v = np.random.default_rng(seed).standard_normal(len(pts))
    labels, lin, coc = [], [], []
    for g in gens:
        Pm = np.zeros((len(pts), len(pts)))
        for k, x in enumerate(pts):
            y = tuple(int(t) for t in (g.array @ np.array(x)) % p)
            Pm[index[y], k] = 1.0
        i, j, _ = next((i, j, 1) for i in range(1, 4) for j in range(1, 4) if i != j and g == elementary_matrix(n, i, j, 1, p))
        labels.append(f"e{i}{j}")
        lin.append(Pm)
        coc.append(v - Pm @ v)
    return AffineAction(labels, lin, coc, G, gens, name="sl3f2-points")


def parallel_lines_action() -> AffineAction:
    """Two reflections of R^2, y -> -y and y -> 2 - y, generating an infinite dihedral group."""
    r = np.diag([1.0, -1.0])
    return AffineAction(["r0", "r1"], [r, r], [np.zeros(2), np.array([0.0, 2.0])], name="parallel-lines")


def translation_action() -> AffineAction:
    return AffineAction(["s"], [np.eye(2)], [np.array([1.0, 0.0])], name="translation")


SCENARIOS = {
    "d3-trivial": lambda: d3_action("trivial"),
    "d3-coboundary": lambda: d3_action("coboundary"),
    "sym3-perm": sym3_permutation_action,
    "sl3f2-points": sl3f2_points_action,
    "parallel-lines": parallel_lines_action,
    "translation": translation_action,
}


def load_action(ref) -> AffineAction:
    if isinstance(ref, str):
        if ref not in SCENARIOS:
            raise KeyError(f"unknown action {ref!r}")
        return SCENARIOS[ref]()
    return AffineAction.from_json(ref)


def energy_midpoint_convexity(sets: Sequence[AffineFixedSet], trials: int, rng, scale: float = 3.0) -> float:
    """Worst value of E((z + z')/2) - (E(z) + E(z'))/2 over random tuples in the product of ``sets``."""
    worst = -math.inf
    for _ in range(trials):
        z1, z2 = [], []
        for F in sets:
            k = F.directions.shape[1]
            z1.append(F.base + F.directions @ (scale * rng.standard_normal(k)))
            z2.append(F.base + F.directions @ (scale * rng.standard_normal(k)))
        mid = [(a + b) / 2 for a, b in zip(z1, z2)]
        worst = max(worst, theta_energy(mid) - (theta_energy(z1) + theta_energy(z2)) / 2)
    return worst


# ---------------------------------------------------------------------------
# corpus files


def _subgroup(action: AffineAction, spec):
    """A subgroup spec: a list of words (lists of labels) or labels."""
    words = [w if isinstance(w, list) else [w] for w in spec]
    if action.group is None:
        return words
    gens = []
    lookup = dict(zip(action.labels, action.elements))
    for w in words:
        g = action.group.identity
        for tok in w:
            lab, sign = _parse_token(tok)
            s = lookup[lab]
            g = mat_mul(g, s if sign == 1 else mat_inv(s))
        gens.append(g)
    return SubgroupHandle(action.group, gens, check=False)


def _sets_from_spec(specs) -> list[AffineFixedSet]:
    return [affine_subspace(s["base"], s.get("directions", [])) for s in specs]


def run_case(case: dict, seed: int = 0) -> tuple[bool, dict]:
    """Evaluate one realizer corpus case; returns (verdict matches expectation, observed)."""
    kind = case["check"]
    tol = float(case.get("tol", CHECK_TOL))
    expected = case["expected"]
    if kind == "theta_energy":
        sets = _sets_from_spec(case["sets"])
        r = minimize_theta_energy(sets)
        return abs(r.value - float(expected)) <= tol, {"energy": r.value, "unique": bool(r.unique)}
    if kind == "energy_parallelism":
        sets = _sets_from_spec(case["sets"])
        r = minimize_theta_energy(sets)
        shift = np.asarray(case.get("shift", np.zeros(sets[0].ambient_dim)), dtype=float)
        other = RealizerTuple([p + shift for p in r.points], 0.0, "energy", fixed_sets=sets)
        other.value = other.recompute()
        rep = check_realizer_parallelism(r, other, tol)
        verdict = "holds" if rep.passed else ("precondition failure" if not rep.precondition else "violated")
        return verdict == expected, rep.to_json()
    if kind == "energy_convexity":
        sets = _sets_from_spec(case["sets"])
        worst = energy_midpoint_convexity(sets, int(case.get("trials", 1000)), np.random.default_rng(case.get("seed", seed)))
        return (worst <= tol) == (expected == "holds"), {"worst": worst}
    action = load_action(case["action"])
    if kind == "fixed_set":
        H = _subgroup(action, case["subgroup"]) if "subgroup" in case else action.group.whole()
        F = fixed_set(action, H)
        got = {"dim": F.dim, "empty": F.empty}
        return all(got[k] == v for k, v in expected.items()), got
    if kind == "distance":
        F1 = fixed_set(action, _subgroup(action, case["M"]))
        F2 = fixed_set(action, _subgroup(action, case["L"]))
        r = realize_distance(F1, F2)
        ok = abs(r.value - float(expected["D"])) <= tol and ("unique" not in expected or expected["unique"] == r.unique)
        return ok, {"D": r.value, "unique": r.unique, "points": [p.tolist() for p in r.points]}
    if kind == "pseudo_uniqueness":
        M, L = _subgroup(action, case["M"]), _subgroup(action, case["L"])
        r = realize_distance(fixed_set(action, M), fixed_set(action, L))
        s1 = np.asarray(case.get("shift", np.zeros(action.dim)), dtype=float)
        s2 = np.asarray(case.get("shift_eta", s1), dtype=float)
        rep = check_pseudo_uniqueness(action, M, L, r.points, [r.points[0] + s1, r.points[1] + s2], tol)
        verdict = "holds" if rep.passed else ("precondition failure" if not rep.precondition else "violated")
        return verdict == expected, rep.to_json()
    if kind == "self_improvement":
        sub = {k: _subgroup(action, case[k]) for k in ("M", "L", "H1", "H2")}
        P = _subgroup(action, case["P"]).generators
        rep = self_improvement_check(action, sub["M"], sub["L"], sub["H1"], sub["H2"], P, seed=case.get("seed", seed), tol=tol)
        verdict = "certified" if rep.passed else ("refused" if not rep.precondition else "violated")
        return verdict == expected, rep.to_json()
    if kind == "displacement":
        S = [w if isinstance(w, list) else [w] for w in case["S"]]
        rep = displacement(action, S, case["z"], tol)
        return abs(rep.value - float(expected)) <= tol, {"value": rep.value}
    raise ValueError(f"unknown check {kind!r}")
