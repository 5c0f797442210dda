"""Cayley graphs of finite matrix quotients and their Poincare constants.

For a finite graph with vertex set V and oriented edge set E, and a metric
target X, the Poincare constant is

    lambda(G, X) = inf_f  |V|^2 sum_{(v,w) in E} d(f v, f w)^2
                          / (2 |E| sum_{(v,w) in V x V} d(f v, f w)^2)

over non-constant f: V -> X.  For X = R and mean-zero f the pair sum equals
2 |V| sum f^2 and the edge sum equals 2 f^T L f (L = D - A, A_vw the number
of generators s with v s = w), so lambda(G, R) = |V| mu_2 / (2 |E|) with mu_2
the second smallest Laplacian eigenvalue.  For a d-regular Cayley graph this
is mu_2 / (2 d).
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph
import scipy.sparse.linalg
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .algebra import (
    MatrixOverFp,
    block_elementary,
    block_generator,
    mat_inv,
)
from .groups import DEFAULT_CAP, FiniteMatrixGroup, closure, sl_order

DENSE_LIMIT = 2048
VERTEX_LIMIT = 1 << 15
LQ_OPT_LIMIT = 1024
SMOOTHING = 1e-12
RING_SYMBOLS = ("1", "s", "t")

EMPIRICAL_NOTE = "desk-scale empirical evidence, not a proof of uniform positivity"


class BudgetExceeded(RuntimeError):
    pass


class DisconnectedGraphError(ValueError):
    pass


# ---------------------------------------------------------------------------
# mother-group images


def _block(symbol: str, sign: int, m: int, p: int) -> MatrixOverFp:
    b = block_generator(symbol, m, p)
    return b if sign == 1 else MatrixOverFp((-b.array) % p, p)


@dataclass
class MotherQuotient:
    """Images of the elementary part {e_ij(+-t_a)} of the standard finite set in SL(4m, F_p)."""

    m: int
    p: int
    labels: list[str]
    images: dict[str, MatrixOverFp]
    blocks: dict[str, tuple[int, int, MatrixOverFp]]
    distinct: list[str]
    aliases: dict[str, list[str]]

    @property
    def n(self) -> int:
        return 4 * self.m

    @property
    def generators(self) -> list[MatrixOverFp]:
        return [self.images[k] for k in self.distinct]

    def target_order(self) -> int:
        return sl_order(self.n, self.p)

    def target_group(self, cap: int = DEFAULT_CAP) -> FiniteMatrixGroup:
        if self.target_order() > cap:
            raise BudgetExceeded(f"|SL({self.n},{self.p})| = {self.target_order()} exceeds budget {cap}")
        return FiniteMatrixGroup(self.generators, name=f"SL({self.n},F_{self.p})", cap=cap)

    def relation_violations(self) -> list[str]:
        """Every Steinberg relation instance among the labeled blocks, evaluated in SL(4m, F_p).

        Families: e_ij(X) e_ij(Y) = e_ij(X + Y); [e_ij(X), e_kl(Y)] = 1 for
        j != k, i != l; [e_ij(X), e_jk(Y)] = e_ik(XY) for i != k.
        """
        p, m = self.p, self.m
        ring: dict[str, np.ndarray] = {}
        for lab in self.labels:
            ring.setdefault(lab.split("(")[1].rstrip(")"), self.blocks[lab][2].array)
        names = sorted(ring)
        N = 4 * m
        eye = np.eye(N, dtype=np.int64)

        def elem(i, j, X):
            a = eye.copy()
            a[(i - 1) * m : i * m, (j - 1) * m : j * m] = X % p
            return a

        # e_ij(X)^-1 = e_ij(-X)
        E = {(i, j, x): (elem(i, j, ring[x]), elem(i, j, -ring[x])) for i in range(1, 5) for j in range(1, 5) if i != j for x in names}
        pairs = [(i, j) for i in range(1, 5) for j in range(1, 5) if i != j]
        bad = []
        for (i, j), x, y in itertools.product(pairs, names, names):
            if not np.array_equal(E[i, j, x][0] @ E[i, j, y][0] % p, elem(i, j, ring[x] + ring[y])):
                bad.append(f"e{i}{j}({x}) e{i}{j}({y}) != e{i}{j}({x}+{y})")
        for (i, j), (k, l), x, y in itertools.product(pairs, pairs, names, names):
            a, ai = E[i, j, x]
            b, bi = E[k, l, y]
            c = a @ b % p @ ai % p @ bi % p
            if j != k and i != l:
                if not np.array_equal(c, eye):
                    bad.append(f"[e{i}{j}({x}), e{k}{l}({y})] != 1")
            elif j == k and i != l:
                if not np.array_equal(c, elem(i, l, ring[x] @ ring[y])):
                    bad.append(f"[e{i}{j}({x}), e{j}{l}({y})] != e{i}{l}({x}*{y})")
        return bad

    def generates_target(self, cap: int = DEFAULT_CAP) -> bool:
        return len(closure(self.generators, cap)) == self.target_order()


def standard_generating_images(m: int, p: int) -> MotherQuotient:
    """Labels e_ij(+-t_a), a in {0,1,2}, with t_0 -> I_m, t_1 -> S_m, t_2 -> T_m.

    Labels whose images coincide (always for p = 2, and for m = 1 where all
    three ring generators are the unit) are deduplicated; ``aliases`` maps
    each kept label to the labels it absorbed.
    """
    if m < 1:
        raise ValueError("block size must be >= 1")
    labels, images, blocks = [], {}, {}
    for i in range(1, 5):
        for j in range(1, 5):
            if i == j:
                continue
            for a, sym in enumerate(RING_SYMBOLS):
                for sign, mark in ((1, "+"), (-1, "-")):
                    lab = f"e{i}{j}({mark}t{a})"
                    b = _block(sym, sign, m, p)
                    labels.append(lab)
                    blocks[lab] = (i, j, b)
                    images[lab] = block_elementary(4, i, j, b)
    distinct: list[str] = []
    aliases: dict[str, list[str]] = {}
    seen: dict[MatrixOverFp, str] = {}
    for lab in labels:
        g = images[lab]
        if g in seen:
            aliases[seen[g]].append(lab)
        else:
            seen[g] = lab
            distinct.append(lab)
            aliases[lab] = []
    return MotherQuotient(m, p, labels, images, blocks, distinct, aliases)


# ---------------------------------------------------------------------------
# Cayley graphs


@dataclass
class CayleyGraph:
    """Right Cayley graph: vertex v has an oriented edge to v*s for each generator s.

    ``neighbors[v, k]`` is the index of v * s_k.
    """

    neighbors: np.ndarray
    labels: list[str]
    keys: np.ndarray | None = None
    group: FiniteMatrixGroup | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def vertex_count(self) -> int:
        return self.neighbors.shape[0]

    @property
    def degree(self) -> int:
        return self.neighbors.shape[1]

    @property
    def edge_count(self) -> int:
        return self.vertex_count * self.degree

    def oriented_edges(self) -> np.ndarray:
        v = np.repeat(np.arange(self.vertex_count), self.degree)
        return np.stack([v, self.neighbors.ravel()], axis=1)

    def adjacency(self) -> scipy.sparse.csr_matrix:
        V, S = self.neighbors.shape
        rows = np.repeat(np.arange(V), S)
        A = scipy.sparse.coo_matrix((np.ones(V * S), (rows, self.neighbors.ravel())), shape=(V, V))
        return A.tocsr()

    def laplacian(self) -> scipy.sparse.csr_matrix:
        A = self.adjacency()
        deg = np.asarray(A.sum(axis=1)).ravel()
        return (scipy.sparse.diags(deg) - A).tocsr()

    def is_connected(self) -> bool:
        n, _ = scipy.sparse.csgraph.connected_components(self.adjacency(), directed=True, connection="weak")
        return n == 1

    def is_symmetric(self) -> bool:
        A = self.adjacency()
        return (A - A.T).count_nonzero() == 0

    @classmethod
    def from_cyclic(cls, n: int, steps) -> CayleyGraph:
        """Cay(Z/n, steps) without going through matrices."""
        steps = [int(s) % n for s in steps]
        nbr = (np.arange(n)[:, None] + np.array(steps, dtype=np.int64)[None, :]) % n
        return cls(nbr, [f"+{s}" for s in steps])

    def header(self) -> dict:
        return {
            "vertices": self.vertex_count,
            "degree": self.degree,
            "oriented_edges": self.edge_count,
            "generator_labels": list(self.labels),
            "group": self.group.name if self.group is not None else None,
            "notes": list(self.notes),
        }

    def write_edge_list(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for v, row in enumerate(self.neighbors):
                for k, w in enumerate(row):
                    fh.write(f"{v} {w} {self.labels[k]}\n")

    def write_header(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.header(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def build_cayley(
    group: FiniteMatrixGroup,
    gens: list[MatrixOverFp],
    labels: list[str] | None = None,
    vertex_limit: int = VERTEX_LIMIT,
) -> CayleyGraph:
    """Cayley graph of ``group`` for a generating list; missing inverses are added."""
    labels = list(labels) if labels is not None else [f"s{k}" for k in range(len(gens))]
    if len(labels) != len(gens):
        raise ValueError("one label per generator")
    notes = []
    gens, labels = list(gens), list(labels)
    # dedupe, then close under inverses
    seen: dict[MatrixOverFp, int] = {}
    kept, kept_labels = [], []
    for g, lab in zip(gens, labels):
        if g not in seen:
            seen[g] = len(kept)
            kept.append(g)
            kept_labels.append(lab)
    if len(kept) < len(gens):
        notes.append(f"dropped {len(gens) - len(kept)} duplicate generators")
    for g, lab in list(zip(kept, kept_labels)):
        gi = mat_inv(g)
        if gi not in seen:
            seen[gi] = len(kept)
            kept.append(gi)
            kept_labels.append(f"{lab}^-1")
            notes.append(f"added inverse of {lab}")
    elements = group.elements
    V = len(elements)
    if V > vertex_limit:
        raise BudgetExceeded(f"{V} vertices exceed the graph budget {vertex_limit}")
    codec = elements.codec
    if not codec.packed:
        raise BudgetExceeded("graph construction needs packed element keys")
    n, p = group.n, group.p
    X = codec.digits(elements.keys).reshape(V, n, n)
    nbr = np.empty((V, len(kept)), dtype=np.int64)
    for k, s in enumerate(kept):
        Y = np.matmul(X, s.array) % p
        try:
            nbr[:, k] = elements.index_of(codec.keys(Y.reshape(V, n * n)))
        except KeyError as exc:
            raise ValueError(f"generator {kept_labels[k]} is not in the group") from exc
    g = CayleyGraph(nbr, kept_labels, np.asarray(elements.keys), group, notes)
    if not g.is_connected():
        raise DisconnectedGraphError("generators do not generate the group")
    return g


def mother_cayley(mq: MotherQuotient, cap: int = DEFAULT_CAP, vertex_limit: int = VERTEX_LIMIT) -> CayleyGraph:
    order = mq.target_order()
    if order > vertex_limit:
        raise BudgetExceeded(f"|SL({mq.n},{mq.p})| = {order} exceeds the graph budget {vertex_limit}")
    G = mq.target_group(cap)
    return build_cayley(G, mq.generators, mq.distinct, vertex_limit)


# ---------------------------------------------------------------------------
# Poincare constants


@dataclass
class PoincareEstimate:
    value: float
    target: str | tuple[float, int]
    kind: str  # "exact-eigen" or "optimizer-upper-bound"
    witness: np.ndarray | None = None
    status: str = "ok"
    restarts: int = 0

    def to_json(self) -> dict:
        return {"value": self.value, "target": self.target, "kind": self.kind, "status": self.status, "restarts": self.restarts}


def _check_graph(g: CayleyGraph) -> None:
    if g.vertex_count < 2:
        raise ValueError("need at least two vertices for a non-constant map")
    if g.degree == 0 or not g.is_connected():
        raise DisconnectedGraphError("Poincare constant needs a connected graph")


def _fiedler(g: CayleyGraph, seed: int = 0) -> tuple[float, np.ndarray]:
    V = g.vertex_count
    if V <= DENSE_LIMIT:
        L = g.laplacian().toarray()
        L = (L + L.T) / 2
        w, vecs = scipy.linalg.eigh(L, subset_by_index=[0, 1])
        return float(w[1]), vecs[:, 1]
    if V > VERTEX_LIMIT:
        raise BudgetExceeded(f"{V} vertices exceed the eigensolver limit {VERTEX_LIMIT}")
    L = g.laplacian()
    L = ((L + L.T) / 2).tocsr()
    shift = 2.0 * g.degree
    # largest eigenvalues of shift*I - L are shift - (0, mu_2)
    B = (scipy.sparse.identity(V) * shift - L).tocsr()
    v0 = np.random.default_rng(seed).standard_normal(V)
    w, vecs = scipy.sparse.linalg.eigsh(B, k=2, which="LA", v0=v0, tol=1e-12, maxiter=20 * V)
    order = np.argsort(-w)
    return float(shift - w[order[1]]), vecs[:, order[1]]


def poincare_exact_scalar(g: CayleyGraph) -> PoincareEstimate:
    """lambda(G, R) = |V| mu_2 / (2 |E|) from the Laplacian spectrum.

    Dense solve up to DENSE_LIMIT vertices, Lanczos up to VERTEX_LIMIT;
    larger graphs are refused.
    """
    _check_graph(g)
    mu2, vec = _fiedler(g)
    value = g.vertex_count * mu2 / (2.0 * g.edge_count)
    return PoincareEstimate(value, "scalar", "exact-eigen", vec.reshape(-1, 1))


def _active_columns(f: np.ndarray) -> np.ndarray:
    keep = np.any(f != 0, axis=0)
    return f[:, keep] if keep.any() else f[:, :1]


def _pair_sum(f: np.ndarray, q: float, chunk: int = 512) -> float:
    """sum over ordered pairs of ||f v - f w||_q^2, exactly."""
    V, d = f.shape
    if d == 1 or q == 2:
        c = f - f.mean(axis=0)
        return float(2 * V * np.sum(c * c))
    total = 0.0
    for start in range(0, V, chunk):
        diff = np.abs(f[start : start + chunk, None, :] - f[None, :, :])
        total += float(np.sum(np.sum(diff**q, axis=2) ** (2.0 / q)))
    return total


def _edge_sum(g: CayleyGraph, f: np.ndarray, q: float) -> float:
    diff = np.abs(f[:, None, :] - f[g.neighbors])
    if f.shape[1] == 1 or q == 2:
        return float(np.sum(diff * diff))
    return float(np.sum(np.sum(diff**q, axis=2) ** (2.0 / q)))


def lambda_ratio(g: CayleyGraph, f, q: float = 2.0) -> float:
    """The Poincare ratio of a map f: V -> l_q^d (rows of f), evaluated exactly."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != g.vertex_count:
        raise ValueError("map must have one row per vertex")
    f = _active_columns(f)
    den = _pair_sum(f, q)
    if den <= 0:
        raise ValueError("ratio undefined for a constant map")
    V = g.vertex_count
    return V * V * _edge_sum(g, f, q) / (2.0 * g.edge_count * den)


def _smoothed_sq_norm(diff: np.ndarray, q: float):
    """(sum_k (u_k^2 + eps)^(q/2))^(2/q) and its gradient in u."""
    t = diff * diff + SMOOTHING
    s = np.sum(t ** (q / 2), axis=-1)
    val = s ** (2.0 / q)
    grad = 2.0 * (s ** (2.0 / q - 1.0))[..., None] * t ** (q / 2 - 1) * diff
    return val, grad


def _ratio_and_grad(g: CayleyGraph, f: np.ndarray, q: float):
    V = g.vertex_count
    d_e = f[:, None, :] - f[g.neighbors]
    num, gn = _smoothed_sq_norm(d_e, q)
    num = num.sum()
    g_num = gn.sum(axis=1)
    np.add.at(g_num, g.neighbors.ravel(), -gn.reshape(-1, f.shape[1]))
    if q == 2:
        c = f - f.mean(axis=0)
        den = 2 * V * float(np.sum(c * c))
        g_den = 4 * V * c
    else:
        d_p = f[:, None, :] - f[None, :, :]
        den, gd = _smoothed_sq_norm(d_p, q)
        den = den.sum()
        # pair (v, w) and (w, v) both contribute; gradient wrt f_v is 2 sum_w grad(v, w)
        g_den = 2.0 * gd.sum(axis=1)
    r = num / den
    return r, (g_num - r * g_den) / den


def _project(f: np.ndarray, q: float) -> np.ndarray:
    f = f - f.mean(axis=0)
    den = _pair_sum(f, q)
    if den <= 0:
        raise ValueError("constant map")
    return f / np.sqrt(den)


def _descend(g: CayleyGraph, f: np.ndarray, q: float, max_iter: int, rtol: float):
    f = _project(f, q)
    r, gr = _ratio_and_grad(g, f, q)
    step = 1e-2 / max(np.linalg.norm(gr), 1e-300)
    best_r, best_f = r, f
    stall = 0
    for it in range(max_iter):
        f_new = _project(f - step * gr, q)
        r_new, gr_new = _ratio_and_grad(g, f_new, q)
        if not np.isfinite(r_new) or r_new > r * (1 + 1e-3) + 1e-15:
            step *= 0.25
            if step < 1e-300:
                break
            continue
        s = (f_new - f).ravel()
        y = (gr_new - gr).ravel()
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else step * 2
        if r_new < best_r:
            if best_r - r_new <= rtol * best_r:
                stall += 1
            else:
                stall = 0
            best_r, best_f = r_new, f_new
        else:
            stall += 1
        f, r, gr = f_new, r_new, gr_new
        if stall >= 20 or np.linalg.norm(gr) <= 1e-12:
            return best_f, True
    return best_f, False


def poincare_upper_lq(
    g: CayleyGraph,
    q: float = 2.0,
    d: int = 3,
    restarts: int = 20,
    seed: int = 0,
    max_iter: int = 3000,
    spectral_start: bool = True,
    rtol: float = 1e-13,
) -> PoincareEstimate:
    """Best Poincare ratio found over maps V -> l_q^d; an upper bound on lambda(G, l_q^d).

    Multi-start projected gradient with Barzilai-Borwein steps.  Iterates are
    centred and scaled to unit pair sum after every step.  |x|^q is smoothed
    only for gradients; the reported value is the exact ratio at the witness.
    ``spectral_start`` adds the Fiedler vector in one coordinate as a start.
    Graphs above LQ_OPT_LIMIT vertices are not optimized: the witness is the
    Fiedler embedding, whose ratio equals lambda(G, R).
    """
    if not q > 1 or not np.isfinite(q):
        raise ValueError("q must lie in (1, inf)")
    if d < 1:
        raise ValueError("d must be >= 1")
    _check_graph(g)
    V = g.vertex_count
    if V > LQ_OPT_LIMIT:
        _, vec = _fiedler(g, seed)
        f = np.zeros((V, d))
        f[:, 0] = vec
        return PoincareEstimate(lambda_ratio(g, f, q), (q, d), "optimizer-upper-bound", f, "not-optimized (size)", 0)
    rng = np.random.default_rng(seed)
    starts = []
    if spectral_start:
        _, vec = _fiedler(g, seed)
        f = np.zeros((V, d))
        f[:, 0] = vec
        starts.append(f)
    while len(starts) < max(restarts, 1):
        starts.append(rng.standard_normal((V, d)))
    best_val, best_f, all_conv = np.inf, None, True
    for f0 in starts:
        f, conv = _descend(g, f0, q, max_iter, rtol)
        all_conv &= conv
        val = lambda_ratio(g, f, q)
        if val < best_val:
            best_val, best_f = val, f
    status = "converged" if all_conv else "budget-exhausted"
    return PoincareEstimate(best_val, (q, d), "optimizer-upper-bound", best_f, status, len(starts))


def brute_force_scalar(g: CayleyGraph, restarts: int = 200, seed: int = 0) -> float:
    """Direct multi-start minimization of the scalar ratio (small graphs, independent of the spectrum)."""
    if g.vertex_count > 8:
        raise ValueError("brute-force minimizer is meant for tiny graphs")
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(restarts):
        x0 = rng.standard_normal(g.vertex_count)

        def fun(x):
            if np.ptp(x) < 1e-9:
                return 1e9
            return lambda_ratio(g, x)

        res = minimize(fun, x0, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
        best = min(best, res.fun)
    return float(best)


# ---------------------------------------------------------------------------
# family reports

CSV_COLUMNS = ["m", "p", "V", "q", "d", "lambda", "kind", "restarts", "seed"]


def family_gap_report(
    m_range,
    p: int,
    q_list,
    d: int = 3,
    restarts: int = 20,
    seed: int = 0,
    cap: int = DEFAULT_CAP,
    vertex_limit: int = VERTEX_LIMIT,
    on_graph=None,
) -> list[dict]:
    """Poincare estimates for the Cayley graphs of SL(4m, F_p) on the standard images.

    q = 2 rows are exact (l_2^d decouples into d copies of R).  Rows whose
    group exceeds ``vertex_limit`` are recorded with kind "overflow".
    ``on_graph(m, graph)`` is called once per graph that was built.
    """
    rows = []
    for m in m_range:
        mq = standard_generating_images(m, p)
        order = mq.target_order()
        if order > vertex_limit:
            for q in q_list:
                rows.append(dict(m=m, p=p, V=order, q=q, d=d, **{"lambda": None}, kind="overflow", restarts=0, seed=seed))
            continue
        g = mother_cayley(mq, cap, vertex_limit)
        if on_graph is not None:
            on_graph(m, g)
        exact = None
        for q in q_list:
            if q == 2:
                exact = exact or poincare_exact_scalar(g)
                est = exact
            else:
                est = poincare_upper_lq(g, q=q, d=d, restarts=restarts, seed=seed)
            rows.append(dict(m=m, p=p, V=g.vertex_count, q=q, d=d, **{"lambda": est.value}, kind=est.kind, restarts=est.restarts, seed=seed))
    return rows


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        lam = "" if r["lambda"] is None else f"{r['lambda']:.12g}"
        w.writerow([r["m"], r["p"], r["V"], f"{float(r['q']):g}", r["d"], lam, r["kind"], r["restarts"], r["seed"]])
    return buf.getvalue()


class PoincareEstimator(BaseEstimator):
    """Estimator wrapper: ``fit(graph)`` sets ``lambda_``, ``kind_``, ``witness_``, ``status_``.

    q = 2 uses the exact eigensolve; other q the multi-start optimizer.
    """

    def __init__(self, q: float = 2.0, d: int = 1, restarts: int = 20, seed: int = 0, max_iter: int = 3000):
        self.q = q
        self.d = d
        self.restarts = restarts
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, X: CayleyGraph, y=None):
        if not isinstance(X, CayleyGraph):
            raise TypeError("fit expects a CayleyGraph")
        if self.q == 2:
            est = poincare_exact_scalar(X)
        else:
            est = poincare_upper_lq(X, self.q, self.d, self.restarts, self.seed, self.max_iter)
        self.lambda_ = est.value
        self.kind_ = est.kind
        self.witness_ = est.witness
        self.status_ = est.status
        return self

    def score(self, X: CayleyGraph, y=None) -> float:
        check_is_fitted(self, "witness_")
        return lambda_ratio(X, self.witness_, self.q)
