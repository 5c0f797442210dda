"""Exact arithmetic over prime fields and dense matrices over F_p.

Matrices are immutable wrappers around small integer numpy arrays.  Every
operation reduces modulo ``p`` immediately, so no floating point ever enters
the group computations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

MAX_MODULUS = 1 << 16


class InvalidIndexError(ValueError):
    pass


class SingularMatrixError(ValueError):
    pass


class ModulusMismatchError(ValueError):
    pass


@lru_cache(maxsize=None)
def is_prime(p: int) -> bool:
    if p < 2:
        return False
    if p < 4:
        return True
    if p % 2 == 0:
        return False
    k = 3
    while k * k <= p:
        if p % k == 0:
            return False
        k += 2
    return True


def check_modulus(p: int) -> int:
    p = int(p)
    if not 2 <= p < MAX_MODULUS or not is_prime(p):
        raise ValueError(f"modulus must be a prime below 2**16, got {p}")
    return p


@dataclass(frozen=True)
class FpScalar:
    """A residue class in F_p."""

    value: int
    modulus: int

    def __post_init__(self):
        check_modulus(self.modulus)
        object.__setattr__(self, "value", int(self.value) % self.modulus)

    def _coerce(self, other) -> int:
        if isinstance(other, FpScalar):
            if other.modulus != self.modulus:
                raise ModulusMismatchError(f"{self.modulus} != {other.modulus}")
            return other.value
        if isinstance(other, (int, np.integer)):
            return int(other)
        return NotImplemented

    def __add__(self, other):
        v = self._coerce(other)
        if v is NotImplemented:
            return v
        return FpScalar(self.value + v, self.modulus)

    __radd__ = __add__

    def __sub__(self, other):
        v = self._coerce(other)
        if v is NotImplemented:
            return v
        return FpScalar(self.value - v, self.modulus)

    def __rsub__(self, other):
        v = self._coerce(other)
        if v is NotImplemented:
            return v
        return FpScalar(v - self.value, self.modulus)

    def __mul__(self, other):
        v = self._coerce(other)
        if v is NotImplemented:
            return v
        return FpScalar(self.value * v, self.modulus)

    __rmul__ = __mul__

    def __neg__(self):
        return FpScalar(-self.value, self.modulus)

    def inverse(self) -> FpScalar:
        if self.value == 0:
            raise ZeroDivisionError("0 has no inverse in F_p")
        return FpScalar(pow(self.value, -1, self.modulus), self.modulus)

    def __truediv__(self, other):
        v = self._coerce(other)
        if v is NotImplemented:
            return v
        return self * FpScalar(v, self.modulus).inverse()

    def __int__(self):
        return self.value

    def __repr__(self):
        return f"{self.value} mod {self.modulus}"


def _residue(r, p: int) -> int:
    if isinstance(r, FpScalar):
        if r.modulus != p:
            raise ModulusMismatchError(f"scalar mod {r.modulus} used with p={p}")
        return r.value
    return int(r) % p


class MatrixOverFp:
    """Dense matrix with entries in F_p.

    The entry array is stored read-only with dtype int64 and entries in
    ``[0, p)``.  Equality and hashing use the raw entry bytes.
    """

    __slots__ = ("_a", "p", "_hash")

    def __init__(self, entries, p: int):
        p = check_modulus(p)
        a = np.array(entries, dtype=np.int64, copy=True)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-d array, got shape {a.shape}")
        a %= p
        a.setflags(write=False)
        self._a = a
        self.p = p
        self._hash = None

    @classmethod
    def _wrap(cls, a: np.ndarray, p: int) -> MatrixOverFp:
        # trusted constructor: a already reduced, owned by the new object
        obj = cls.__new__(cls)
        a.setflags(write=False)
        obj._a = a
        obj.p = p
        obj._hash = None
        return obj

    @classmethod
    def identity(cls, n: int, p: int) -> MatrixOverFp:
        return cls(np.eye(n, dtype=np.int64), p)

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._a.shape

    @property
    def array(self) -> np.ndarray:
        return self._a

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    def __getitem__(self, idx):
        return self._a[idx]

    def __eq__(self, other):
        if not isinstance(other, MatrixOverFp):
            return NotImplemented
        return self.p == other.p and self.shape == other.shape and np.array_equal(self._a, other._a)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.p, self.shape, self._a.tobytes()))
        return self._hash

    def __matmul__(self, other):
        if not isinstance(other, MatrixOverFp):
            return NotImplemented
        return mat_mul(self, other)

    def __repr__(self):
        body = "; ".join(" ".join(str(int(v)) for v in row) for row in self._a)
        return f"MatrixOverFp([{body}] mod {self.p})"

    def inverse(self) -> MatrixOverFp:
        return mat_inv(self)

    def det(self) -> int:
        return determinant(self)

    def is_identity(self) -> bool:
        return self.is_square and np.array_equal(self._a, np.eye(self.rows, dtype=np.int64))

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "rows": self.rows,
            "cols": self.cols,
            "entries": [int(v) for v in self._a.ravel()],
        }

    @classmethod
    def from_json(cls, obj) -> MatrixOverFp:
        if isinstance(obj, str):
            obj = json.loads(obj)
        rows, cols = int(obj["rows"]), int(obj["cols"])
        entries = list(obj["entries"])
        if len(entries) != rows * cols:
            raise ValueError(f"expected {rows * cols} entries, got {len(entries)}")
        return cls(np.array(entries, dtype=np.int64).reshape(rows, cols), int(obj["p"]))


def _check_same_modulus(a: MatrixOverFp, b: MatrixOverFp):
    if a.p != b.p:
        raise ModulusMismatchError(f"moduli differ: {a.p} vs {b.p}")


def mat_mul(a: MatrixOverFp, b: MatrixOverFp) -> MatrixOverFp:
    _check_same_modulus(a, b)
    if a.cols != b.rows:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    # entries < 2**16, so a row-column sum of up to 2**31 terms fits in int64
    return MatrixOverFp._wrap((a.array @ b.array) % a.p, a.p)


def mat_prod(mats: Iterable[MatrixOverFp]) -> MatrixOverFp:
    it = iter(mats)
    out = next(it)
    for m in it:
        out = mat_mul(out, m)
    return out


def _row_reduce(a: np.ndarray, p: int):
    """Gauss-Jordan elimination in place over F_p; returns (rank, det sign/scale)."""
    m, n = a.shape
    row = 0
    scale = 1
    for col in range(n):
        if row == m:
            break
        nz = np.flatnonzero(a[row:, col])
        if nz.size == 0:
            scale = 0
            continue
        piv = row + nz[0]
        if piv != row:
            a[[row, piv]] = a[[piv, row]]
            scale = -scale
        pv = int(a[row, col])
        scale = (scale * pv) % p
        a[row] = (a[row] * pow(pv, -1, p)) % p
        others = np.flatnonzero(a[:, col])
        others = others[others != row]
        if others.size:
            a[others] = (a[others] - np.outer(a[others, col], a[row])) % p
        row += 1
    return row, scale % p


def determinant(a: MatrixOverFp) -> int:
    if not a.is_square:
        raise ValueError("determinant of a non-square matrix")
    work = a.array.copy()
    rank, scale = _row_reduce(work, a.p)
    return scale if rank == a.rows else 0


def mat_inv(a: MatrixOverFp) -> MatrixOverFp:
    if not a.is_square:
        raise SingularMatrixError(f"non-square matrix {a.shape} has no inverse")
    n = a.rows
    work = np.concatenate([a.array, np.eye(n, dtype=np.int64)], axis=1)
    _row_reduce(work, a.p)
    if not np.array_equal(work[:, :n], np.eye(n, dtype=np.int64)):
        raise SingularMatrixError(f"matrix is singular over F_{a.p}")
    return MatrixOverFp._wrap(np.ascontiguousarray(work[:, n:]), a.p)


def commutator(a: MatrixOverFp, b: MatrixOverFp) -> MatrixOverFp:
    """[a, b] = a b a^-1 b^-1."""
    return mat_prod([a, b, mat_inv(a), mat_inv(b)])


def elementary_matrix(n: int, i: int, j: int, r, p: int | None = None) -> MatrixOverFp:
    """e_{i,j}(r): the identity with r at (i, j); indices are 1-based.

    ``r`` is either an :class:`FpScalar` or an integer together with ``p``.
    """
    if p is None:
        if not isinstance(r, FpScalar):
            raise TypeError("pass p explicitly when r is a plain integer")
        p = r.modulus
    p = check_modulus(p)
    if not (1 <= i <= n and 1 <= j <= n) or i == j:
        raise InvalidIndexError(f"need 1 <= i != j <= {n}, got ({i}, {j})")
    a = np.eye(n, dtype=np.int64)
    a[i - 1, j - 1] = _residue(r, p)
    return MatrixOverFp._wrap(a, p)


def elementary_position(g: MatrixOverFp) -> tuple[int, int, int] | None:
    """Return (i, j, r) if ``g`` is a non-identity elementary matrix, else None."""
    if not g.is_square:
        return None
    d = (g.array - np.eye(g.rows, dtype=np.int64)) % g.p
    nz = np.argwhere(d)
    if len(nz) != 1:
        return None
    i, j = (int(v) for v in nz[0])
    if i == j:
        return None
    return i + 1, j + 1, int(d[i, j])


def permutation_matrix(perm: Sequence[int], p: int) -> MatrixOverFp:
    """Matrix sending basis vector e_k to e_{perm[k]} (0-based images)."""
    n = len(perm)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"not a permutation of range({n}): {perm}")
    a = np.zeros((n, n), dtype=np.int64)
    a[list(perm), list(range(n))] = 1
    return MatrixOverFp(a, p)


def cyclic_shift(m: int, p: int) -> MatrixOverFp:
    """T_m: the permutation matrix sending e_k to e_{k+1 mod m}."""
    if m < 1:
        raise ValueError("block size must be >= 1")
    return permutation_matrix([(k + 1) % m for k in range(m)], p)


def block_generator(symbol: str, m: int, p: int) -> MatrixOverFp:
    """Image of a ring generator in Mat_m(F_p): '1' -> I_m, 's' -> S_m, 't' -> T_m."""
    if m < 1:
        raise ValueError("block size must be >= 1")
    if symbol == "1":
        return MatrixOverFp.identity(m, p)
    if symbol == "s":
        if m == 1:
            # S_1 = e_{1,2}(1) does not exist in size 1; the 1x1 ring is F_p itself
            return MatrixOverFp.identity(1, p)
        return elementary_matrix(m, 1, 2, 1, p)
    if symbol == "t":
        return cyclic_shift(m, p)
    raise ValueError(f"unknown ring generator {symbol!r}; expected '1', 's' or 't'")


def block_elementary(n: int, i: int, j: int, block: MatrixOverFp) -> MatrixOverFp:
    """I_{n m} with the m x m block at block position (i, j) set to ``block``."""
    m = block.rows
    if not block.is_square:
        raise ValueError("block must be square")
    if not (1 <= i <= n and 1 <= j <= n) or i == j:
        raise InvalidIndexError(f"need 1 <= i != j <= {n}, got ({i}, {j})")
    a = np.eye(n * m, dtype=np.int64)
    a[(i - 1) * m : i * m, (j - 1) * m : j * m] = block.array
    return MatrixOverFp._wrap(a, block.p)


def block_embed(n: int, m: int, p: int, i: int, j: int, symbol: str, sign: int = 1) -> MatrixOverFp:
    """Image of the abstract generator e_{i,j}(sign * x), x in {1, s, t}, in SL(n m, F_p)."""
    if n != 4:
        raise ValueError("the mother-group construction uses n = 4 outer blocks")
    if m < 1:
        raise ValueError("block size must be >= 1")
    block = block_generator(symbol, m, p)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if sign == -1:
        block = MatrixOverFp._wrap((-block.array) % p, p)
    return block_elementary(n, i, j, block)
