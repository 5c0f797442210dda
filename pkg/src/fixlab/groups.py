"""Finite matrix groups over F_p enumerated by breadth-first closure.

Elements are identified by their row-major residue array.  When
``p**(n*n) <= 2**64`` that array is packed into a single ``uint64`` key
(base-``p`` digits), which lets the closure run on whole frontiers at once;
larger key spaces fall back to a plain set of byte strings.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import count
from typing import Iterable, Sequence

import numba
import numpy as np

from .algebra import (
    MatrixOverFp,
    commutator,
    determinant,
    elementary_matrix,
    elementary_position,
    mat_inv,
    mat_mul,
    permutation_matrix,
)

log = logging.getLogger(__name__)

DEFAULT_CAP = 20_000_000
_BITMAP_LIMIT = 1 << 27
_CHUNK = 1 << 19
_ids = count(1)


class ClosureOverflow(RuntimeError):
    """The generated subgroup has more elements than the cap allows."""

    def __init__(self, cap: int, reached: int):
        super().__init__(f"closure exceeded cap of {cap} elements (reached {reached})")
        self.cap = cap
        self.reached = reached


class InvalidAutomorphismError(ValueError):
    pass


class NoCertificateError(ValueError):
    pass


def sl_order(n: int, q: int) -> int:
    """|SL(n, F_q)| = q^(n(n-1)/2) * prod_{k=2..n} (q^k - 1)."""
    out = q ** (n * (n - 1) // 2)
    for k in range(2, n + 1):
        out *= q**k - 1
    return out


class _Codec:
    """Bijection between n x n residue arrays and integer keys."""

    def __init__(self, n: int, p: int):
        self.n = n
        self.p = p
        self.space = p ** (n * n)
        self.packed = self.space <= 1 << 64
        if self.packed:
            self.powers = np.array([p**k for k in range(n * n)], dtype=np.uint64)

    def key(self, g: MatrixOverFp):
        if self.packed:
            return int(np.dot(g.array.ravel().astype(np.uint64), self.powers))
        return g.array.astype(np.uint16).tobytes()

    def keys(self, digits: np.ndarray) -> np.ndarray:
        # digits: (F, n*n) residues
        return digits.astype(np.uint64) @ self.powers

    def digits(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.uint64)
        out = np.empty((keys.size, self.n * self.n), dtype=np.int64)
        rest = keys.copy()
        p = np.uint64(self.p)
        for k in range(self.n * self.n):
            out[:, k] = (rest % p).astype(np.int64)
            rest //= p
        return out

    def matrix(self, key) -> MatrixOverFp:
        if self.packed:
            d = self.digits(np.array([key], dtype=np.uint64))[0]
            return MatrixOverFp(d.reshape(self.n, self.n), self.p)
        a = np.frombuffer(key, dtype=np.uint16).astype(np.int64)
        return MatrixOverFp(a.reshape(self.n, self.n), self.p)


class ElementSet:
    """A sealed set of group elements (sorted keys, or a frozenset of bytes)."""

    def __init__(self, n: int, p: int, keys):
        self.codec = _Codec(n, p)
        self.n = n
        self.p = p
        if self.codec.packed:
            self.keys = np.asarray(keys, dtype=np.uint64)
            self.keys.setflags(write=False)
        else:
            self.keys = frozenset(keys)

    def __len__(self):
        return len(self.keys)

    def __contains__(self, g: MatrixOverFp) -> bool:
        if g.shape != (self.n, self.n) or g.p != self.p:
            return False
        k = self.codec.key(g)
        if self.codec.packed:
            i = np.searchsorted(self.keys, np.uint64(k))
            return bool(i < len(self.keys) and int(self.keys[i]) == k)
        return k in self.keys

    def contains_many(self, keys: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.keys, keys)
        idx[idx == len(self.keys)] = 0
        return self.keys[idx] == keys

    def index_of(self, keys: np.ndarray) -> np.ndarray:
        """Positions of packed keys in the sorted key array (keys must be members)."""
        idx = np.searchsorted(self.keys, keys)
        if np.any(idx >= len(self.keys)) or np.any(self.keys[np.minimum(idx, len(self.keys) - 1)] != keys):
            raise KeyError("key not in element set")
        return idx

    def issubset(self, other: ElementSet) -> bool:
        if self.codec.packed:
            return bool(np.all(other.contains_many(np.asarray(self.keys))))
        return self.keys <= other.keys

    def __eq__(self, other):
        if not isinstance(other, ElementSet):
            return NotImplemented
        if (self.n, self.p) != (other.n, other.p) or len(self) != len(other):
            return False
        if self.codec.packed:
            return bool(np.array_equal(self.keys, other.keys))
        return self.keys == other.keys

    __hash__ = None

    def matrices(self) -> Iterable[MatrixOverFp]:
        if self.codec.packed:
            for start in range(0, len(self.keys), _CHUNK):
                block = self.codec.digits(self.keys[start : start + _CHUNK])
                for row in block:
                    yield MatrixOverFp(row.reshape(self.n, self.n), self.p)
        else:
            for k in sorted(self.keys):
                yield self.codec.matrix(k)

    def sorted_entry_arrays(self) -> list[list[int]]:
        """Export for cross-run diffing: row-major residue arrays in key order."""
        return [[int(v) for v in m.array.ravel()] for m in self.matrices()]


def _check_generators(gens: Sequence[MatrixOverFp]) -> tuple[int, int]:
    if not gens:
        raise ValueError("need at least one generator")
    n, p = gens[0].rows, gens[0].p
    for g in gens:
        if g.shape != (n, n) or g.p != p:
            raise ValueError("generators must share dimension and modulus")
        if determinant(g) == 0:
            raise ValueError(f"generator is not invertible: {g}")
    return n, p


def _symmetrize(gens: Sequence[MatrixOverFp]) -> list[MatrixOverFp]:
    seen = {}
    for g in gens:
        for h in (g, mat_inv(g)):
            if not h.is_identity():
                seen.setdefault(h, None)
    return list(seen)


def closure(gens: Sequence[MatrixOverFp], cap: int = DEFAULT_CAP) -> ElementSet:
    """Enumerate the subgroup generated by ``gens``.

    Breadth-first search from the identity under right multiplication by the
    generators and their inverses.  Raises :class:`ClosureOverflow` rather
    than returning a truncated set.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    n, p = _check_generators(gens)
    steps = _symmetrize(gens)
    codec = _Codec(n, p)
    if not steps:
        # only identities were given
        k = codec.key(MatrixOverFp.identity(n, p))
        keys = np.array([k], dtype=np.uint64) if codec.packed else {k}
    elif codec.packed:
        keys = _closure_packed(codec, steps, cap)
    else:
        keys = _closure_bytes(codec, steps, cap)
    return ElementSet(n, p, keys)


def _closure_packed(codec: _Codec, steps: list[MatrixOverFp], cap: int) -> np.ndarray:
    n, p = codec.n, codec.p
    ident = codec.keys(np.eye(n, dtype=np.int64).reshape(1, -1))
    # each step acts by A -> A @ g = A + A @ (g - I); only columns of g - I
    # with nonzero entries change
    deltas = np.stack([(g.array - np.eye(n, dtype=np.int64)) % p for g in steps])
    if codec.space <= _BITMAP_LIMIT:
        return _closure_bitmap(codec, deltas, ident, cap)

    col_pos = [np.arange(n) * n + k for k in range(n)]
    pw = codec.powers
    plans = [[(k, d[:, k]) for k in range(n) if d[:, k].any()] for d in deltas]
    visited = ident.copy()
    total = 1
    frontier = ident
    while frontier.size:
        fresh = []
        for start in range(0, frontier.size, _CHUNK):
            fkeys = frontier[start : start + _CHUNK]
            A = codec.digits(fkeys).reshape(-1, n, n)
            for plan in plans:
                out = fkeys.copy()
                for k, dcol in plan:
                    old = A[:, :, k]
                    new = (old + A @ dcol) % p
                    pos = col_pos[k]
                    # uint64 arithmetic wraps, and the final key is in range
                    out += new.astype(np.uint64) @ pw[pos]
                    out -= old.astype(np.uint64) @ pw[pos]
                cand = np.unique(out)
                cand = cand[~_sorted_member(visited, cand)]
                if cand.size:
                    visited = np.union1d(visited, cand)
                    fresh.append(cand)
                    total += cand.size
                    if total > cap:
                        raise ClosureOverflow(cap, total)
        frontier = np.concatenate(fresh) if fresh else np.empty(0, dtype=np.uint64)
    return visited


def _closure_bitmap(codec: _Codec, deltas: np.ndarray, ident: np.ndarray, cap: int) -> np.ndarray:
    n = codec.n
    # sparse form of each g - I: (column, row, value) triples grouped by column
    cols, starts, rows, vals = [], [0], [], []
    for d in deltas:
        c_list = []
        for k in range(n):
            nz = np.flatnonzero(d[:, k])
            if nz.size:
                c_list.append(k)
                rows.extend(nz.tolist())
                vals.extend(d[nz, k].tolist())
                starts.append(len(rows))
        cols.append(c_list)
    col_of = np.array([k for c in cols for k in c], dtype=np.int64)
    step_ptr = np.cumsum([0] + [len(c) for c in cols]).astype(np.int64)
    nz_ptr = np.array(starts, dtype=np.int64)
    nz_row = np.array(rows, dtype=np.int64)
    nz_val = np.array(vals, dtype=np.int64)

    p = codec.p
    # multiplication table avoids an integer division per entry in the hot loop
    mul = np.outer(np.arange(p), np.arange(p)) % p if p <= 256 else np.zeros((0, 0), dtype=np.int64)
    seen = np.zeros(codec.space // 8 + 1, dtype=np.uint8)
    i0 = int(ident[0])
    seen[i0 >> 3] |= np.uint8(1 << (i0 & 7))
    total = 1
    frontier = ident
    while frontier.size:
        room = min(cap - total + 1, codec.space - total, frontier.size * len(deltas))
        out = np.empty(max(room, 1), dtype=np.uint64)
        cnt = _bitmap_layer(frontier, seen, out, n, codec.p, codec.powers, step_ptr, col_of, nz_ptr, nz_row, nz_val, mul)
        if cnt < 0:
            raise ClosureOverflow(cap, cap + 1)
        total += cnt
        if total > cap:
            raise ClosureOverflow(cap, total)
        frontier = out[:cnt].copy()
    bits = np.unpackbits(seen, bitorder="little")[: codec.space]
    return np.flatnonzero(bits).astype(np.uint64)


@numba.njit(cache=True)
def _bitmap_layer(frontier, seen, out, n, p, pw, step_ptr, col_of, nz_ptr, nz_row, nz_val, mul):
    pu = np.uint64(p)
    table = mul.shape[0] > 0
    nn = n * n
    A = np.empty(nn, dtype=np.int64)
    cnt = 0
    for f in range(frontier.size):
        key = frontier[f]
        rest = key
        for k in range(nn):
            A[k] = np.int64(rest % pu)
            rest = rest // pu
        for s in range(step_ptr.size - 1):
            nk = key
            for c in range(step_ptr[s], step_ptr[s + 1]):
                k = col_of[c]
                for row in range(n):
                    old = A[row * n + k]
                    if table:
                        new = old
                        for z in range(nz_ptr[c], nz_ptr[c + 1]):
                            new += mul[A[row * n + nz_row[z]], nz_val[z]]
                            if new >= p:
                                new -= p
                    else:
                        acc = old
                        for z in range(nz_ptr[c], nz_ptr[c + 1]):
                            acc += A[row * n + nz_row[z]] * nz_val[z]
                        new = acc % p
                    if new != old:
                        w = pw[row * n + k]
                        nk = nk + np.uint64(new) * w - np.uint64(old) * w
            byte = nk >> np.uint64(3)
            bit = np.uint8(1) << np.uint8(nk & np.uint64(7))
            if (seen[byte] & bit) == 0:
                seen[byte] |= bit
                if cnt >= out.size:
                    return -1
                out[cnt] = nk
                cnt += 1
    return cnt


def _sorted_member(sorted_keys: np.ndarray, probe: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(sorted_keys, probe)
    idx[idx == len(sorted_keys)] = 0
    return sorted_keys[idx] == probe


def _closure_bytes(codec: _Codec, steps: list[MatrixOverFp], cap: int) -> set:
    ident = MatrixOverFp.identity(codec.n, codec.p)
    seen = {codec.key(ident)}
    frontier = [ident]
    while frontier:
        nxt = []
        for a in frontier:
            for g in steps:
                b = mat_mul(a, g)
                k = codec.key(b)
                if k not in seen:
                    seen.add(k)
                    if len(seen) > cap:
                        raise ClosureOverflow(cap, len(seen))
                    nxt.append(b)
        frontier = nxt
    return seen


class FiniteMatrixGroup:
    """The group generated by a list of invertible matrices over F_p.

    The element set is computed on first use and cached.
    """

    def __init__(self, generators: Sequence[MatrixOverFp], name: str | None = None, cap: int = DEFAULT_CAP):
        self.n, self.p = _check_generators(list(generators))
        self.generators = tuple(generators)
        self.name = name or f"G{next(_ids)}"
        self.cap = cap
        self._elements: ElementSet | None = None

    @classmethod
    def elementary(cls, n: int, p: int, **kw) -> FiniteMatrixGroup:
        """E(n, F_p) = <e_{i,j}(1) : i != j>, which equals SL(n, F_p)."""
        gens = [elementary_matrix(n, i, j, 1, p) for i in range(1, n + 1) for j in range(1, n + 1) if i != j]
        kw.setdefault("name", f"E({n},F_{p})")
        return cls(gens, **kw)

    @property
    def elements(self) -> ElementSet:
        if self._elements is None:
            self._elements = closure(self.generators, self.cap)
        return self._elements

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def identity(self) -> MatrixOverFp:
        return MatrixOverFp.identity(self.n, self.p)

    def __contains__(self, g: MatrixOverFp) -> bool:
        return g in self.elements

    def whole(self) -> SubgroupHandle:
        h = SubgroupHandle(self, self.generators, check=False)
        h._closure = self._elements
        return h

    def subgroup(self, generators: Sequence[MatrixOverFp], name: str | None = None, check: bool = True) -> SubgroupHandle:
        return SubgroupHandle(self, generators, name=name, check=check)

    def to_json(self) -> dict:
        return {"id": self.name, "n": self.n, "p": self.p, "generators": [g.to_json() for g in self.generators]}

    def __repr__(self):
        return f"FiniteMatrixGroup({self.name}, n={self.n}, p={self.p}, {len(self.generators)} generators)"


class SubgroupHandle:
    """A finitely generated subgroup of an ambient :class:`FiniteMatrixGroup`."""

    def __init__(self, ambient: FiniteMatrixGroup, generators: Sequence[MatrixOverFp], name: str | None = None, check: bool = True):
        self.ambient = ambient
        gens = tuple(generators)
        for g in gens:
            if g.shape != (ambient.n, ambient.n) or g.p != ambient.p:
                raise ValueError("generator does not match the ambient dimension/modulus")
        if check:
            for g in gens:
                if g not in ambient:
                    raise ValueError(f"generator {g} is not in {ambient.name}")
        self.generators = gens
        self.name = name
        self._closure: ElementSet | None = None

    def closure(self, cap: int | None = None) -> ElementSet:
        if self._closure is None:
            gens = self.generators or (self.ambient.identity,)
            self._closure = closure(gens, cap or self.ambient.cap)
        return self._closure

    @property
    def sealed(self) -> bool:
        return self._closure is not None

    @property
    def order(self) -> int:
        return len(self.closure())

    def __contains__(self, g: MatrixOverFp) -> bool:
        return contains(self, g)

    def join(self, extra: Iterable[MatrixOverFp], name: str | None = None) -> SubgroupHandle:
        gens = list(self.generators)
        known = set(gens)
        for g in extra:
            if g not in known:
                known.add(g)
                gens.append(g)
        return SubgroupHandle(self.ambient, gens, name=name, check=False)

    def to_json(self) -> dict:
        return {"ambient_id": self.ambient.name, "generators": [g.to_json() for g in self.generators]}

    def __repr__(self):
        label = self.name or "H"
        return f"SubgroupHandle({label} <= {self.ambient.name}, {len(self.generators)} generators)"


def contains(H: SubgroupHandle, g: MatrixOverFp) -> bool:
    if g.shape != (H.ambient.n, H.ambient.n) or g.p != H.ambient.p:
        raise ValueError("element does not match the ambient dimension/modulus")
    return g in H.closure()


def subgroup_leq(A: SubgroupHandle, B: SubgroupHandle) -> bool:
    """A <= B, decided by membership of A's generators in B's closure."""
    if A.ambient is not B.ambient:
        raise ValueError("subgroups live in different ambient groups")
    return all(contains(B, g) for g in A.generators)


def leq_witness(A: SubgroupHandle, B: SubgroupHandle) -> MatrixOverFp | None:
    """First generator of A outside B, or None when A <= B."""
    for g in A.generators:
        if not contains(B, g):
            return g
    return None


def conjugate(h: MatrixOverFp, H: SubgroupHandle) -> SubgroupHandle:
    """h H h^-1, as a handle on the conjugated generators."""
    hinv = mat_inv(h)
    gens = [mat_mul(mat_mul(h, g), hinv) for g in H.generators]
    return SubgroupHandle(H.ambient, gens, check=False)


@dataclass(frozen=True)
class GroupAutomorphism:
    """Conjugation x -> c x c^-1 by an element c of GL(n, F_p) normalizing G.

    ``kind`` records provenance: ``"inner"`` (c in G), ``"gl"`` (any c in
    GL(n, F_p), e.g. a permutation matrix) or ``"composite"``.
    """

    matrix: MatrixOverFp
    kind: str = "gl"
    label: str = ""

    def __call__(self, g: MatrixOverFp) -> MatrixOverFp:
        return mat_mul(mat_mul(self.matrix, g), mat_inv(self.matrix))

    def compose(self, other: GroupAutomorphism) -> GroupAutomorphism:
        """self o other."""
        kind = self.kind if self.kind == other.kind else "composite"
        label = f"{self.label}*{other.label}" if self.label or other.label else ""
        return GroupAutomorphism(mat_mul(self.matrix, other.matrix), kind, label)

    def inverse(self) -> GroupAutomorphism:
        return GroupAutomorphism(mat_inv(self.matrix), self.kind, f"{self.label}^-1" if self.label else "")

    def images(self, G: FiniteMatrixGroup) -> tuple[MatrixOverFp, ...]:
        return tuple(self(g) for g in G.generators)


def make_automorphism(G: FiniteMatrixGroup, c: MatrixOverFp, kind: str = "gl", label: str = "") -> GroupAutomorphism:
    """Build conjugation by ``c`` after checking it maps G into G."""
    if c.shape != (G.n, G.n) or c.p != G.p or determinant(c) == 0:
        raise InvalidAutomorphismError("conjugating matrix must be invertible with the ambient shape")
    if kind == "inner" and c not in G:
        raise InvalidAutomorphismError("inner automorphism requires c in G")
    phi = GroupAutomorphism(c, kind, label)
    for g in G.generators:
        if phi(g) not in G:
            raise InvalidAutomorphismError(f"image of generator {g} leaves {G.name}")
    return phi


def inner(G: FiniteMatrixGroup, c: MatrixOverFp, label: str = "") -> GroupAutomorphism:
    return make_automorphism(G, c, "inner", label)


def permutation_automorphism(G: FiniteMatrixGroup, perm: Sequence[int], label: str = "") -> GroupAutomorphism:
    """phi_tau: e_{i,j}(r) -> e_{tau(i),tau(j)}(r), via the permutation matrix of tau (0-based)."""
    return make_automorphism(G, permutation_matrix(perm, G.p), "gl", label or f"phi{list(perm)}")


def apply_automorphism(phi: GroupAutomorphism, H: SubgroupHandle) -> SubgroupHandle:
    gens = [phi(g) for g in H.generators]
    for g in gens:
        if g not in H.ambient:
            raise InvalidAutomorphismError(f"image {g} is not in {H.ambient.name}")
    return SubgroupHandle(H.ambient, gens, check=False)


@dataclass
class TorsionCertificate:
    """Outcome of the abelianization torsion side-condition.

    ``result`` is True, or None when the closure overflowed (indeterminate).
    """

    result: bool | None
    order: int | None
    note: str
    scope: str = "finite quotient"

    def to_json(self) -> dict:
        return {"result": self.result, "order": self.order, "note": self.note, "scope": self.scope}


def abelianization_is_torsion(Q: SubgroupHandle) -> TorsionCertificate:
    """Q^abel is torsion; automatic once Q is known to be finite."""
    try:
        order = Q.order
    except ClosureOverflow as exc:
        return TorsionCertificate(None, None, f"indeterminate: {exc}")
    return TorsionCertificate(
        True,
        order,
        f"finite, order {order}: every element of the abelianization has finite order",
    )


@dataclass(frozen=True)
class CommutatorWitness:
    """e_{i,j}(r) = [e_{i,k}(r), e_{k,j}(1)]."""

    target: tuple[int, int, int]
    left: tuple[int, int, int]
    right: tuple[int, int, int]
    verified: bool

    def to_json(self) -> dict:
        return {"target": list(self.target), "left": list(self.left), "right": list(self.right), "verified": self.verified}

    def __str__(self):
        (i, j, r), (a, b, x), (c, d, y) = self.target, self.left, self.right
        return f"e_{i},{j}({r}) = [e_{a},{b}({x}), e_{c},{d}({y})]"


def perfectness_certificate(
    index_set: Iterable[int],
    p: int,
    n: int | None = None,
    targets: Iterable[tuple[int, int, int]] | None = None,
) -> list[CommutatorWitness]:
    """Express every e_{i,j}(r) on ``index_set`` as a commutator of two others.

    Each witness is checked by evaluating the commutator as matrices.  Needs
    at least three indices so a pivot index k outside {i, j} exists.
    """
    idx = sorted(set(int(i) for i in index_set))
    if len(idx) < 3:
        raise NoCertificateError(f"need at least 3 indices, got {idx}")
    n = n or idx[-1]
    if targets is None:
        targets = [(i, j, r) for i in idx for j in idx if i != j for r in range(1, p)]
    out = []
    for i, j, r in targets:
        if i not in idx or j not in idx or i == j:
            raise NoCertificateError(f"target e_{i},{j} is not on the index set {idx}")
        k = next(k for k in idx if k not in (i, j))
        lhs = commutator(elementary_matrix(n, i, k, r, p), elementary_matrix(n, k, j, 1, p))
        ok = lhs == elementary_matrix(n, i, j, r, p)
        out.append(CommutatorWitness((i, j, r % p), (i, k, r % p), (k, j, 1), ok))
    return out


def elementary_index_set(P: Iterable[MatrixOverFp]) -> set[int] | None:
    """Indices touched by P when P consists of elementary matrices, else None."""
    idx: set[int] = set()
    for g in P:
        pos = elementary_position(g)
        if pos is None:
            return None
        idx.update(pos[:2])
    return idx


def export_closure(H: SubgroupHandle, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({**H.to_json(), "order": H.order, "elements": H.closure().sorted_entry_arrays()}, fh)
        fh.write("\n")
