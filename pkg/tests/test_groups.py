import math

import pytest

from fixlab.algebra import MatrixOverFp, commutator, elementary_matrix, mat_inv, mat_prod, permutation_matrix
from fixlab.groups import (
    ClosureOverflow,
    FiniteMatrixGroup,
    NoCertificateError,
    abelianization_is_torsion,
    apply_automorphism,
    closure,
    conjugate,
    contains,
    inner,
    perfectness_certificate,
    permutation_automorphism,
    sl_order,
    subgroup_leq,
)


def E(n, i, j, r, p):
    return elementary_matrix(n, i, j, r, p)


def bfs_closure(gens):
    """Reference closure: breadth-first search over tuples of residues."""
    p = gens[0].p
    n = gens[0].rows
    start = tuple(MatrixOverFp.identity(n, p).array.ravel())
    arrays = [g.array for g in gens]
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for key in frontier:
            a = MatrixOverFp(list(zip(*[iter(key)] * n)), p).array
            for s in arrays:
                b = tuple(((a @ s) % p).ravel())
                if b not in seen:
                    seen.add(b)
                    nxt.append(b)
        frontier = nxt
    return seen


def order_formula(n, q):
    # independent arithmetic: |GL(n,q)| / (q - 1)
    gl = math.prod(q**n - q**k for k in range(n))
    return gl // (q - 1)


def all_elementary(n, p):
    return [E(n, i, j, 1, p) for i in range(1, n + 1) for j in range(1, n + 1) if i != j]


def keyset(es):
    return {tuple(m.array.ravel()) for m in es.matrices()}


@pytest.mark.parametrize("n,p", [(2, 2), (2, 3), (3, 2), (3, 3), (4, 2)])
def test_elementary_closure_has_sl_order(n, p):
    es = closure(all_elementary(n, p))
    assert len(es) == order_formula(n, p) == sl_order(n, p)


@pytest.mark.parametrize(
    "gens",
    [
        [E(2, 1, 2, 1, 2), E(2, 2, 1, 1, 2)],
        [E(3, 1, 2, 1, 3), E(3, 2, 3, 1, 3)],
        [E(3, 1, 3, 1, 2), E(3, 2, 3, 1, 2), E(3, 3, 1, 1, 2)],
        [permutation_matrix([1, 2, 0], 5), E(3, 1, 2, 2, 5)],
    ],
)
def test_closure_matches_bfs_oracle(gens):
    assert keyset(closure(gens)) == bfs_closure(gens)


def test_closure_small_examples():
    assert len(closure([E(2, 1, 2, 1, 2), E(2, 2, 1, 1, 2)], cap=10**6)) == 6
    assert len(closure([MatrixOverFp.identity(3, 5)], cap=10)) == 1
    assert len(closure(all_elementary(3, 2), cap=10**6)) == 168


def test_closure_independent_of_order_and_redundancy():
    gens = all_elementary(3, 3)
    base = keyset(closure(gens))
    assert keyset(closure(gens[::-1])) == base
    assert keyset(closure(gens + [mat_prod(gens[:3]), gens[0]])) == base


def test_closure_overflow_is_raised():
    with pytest.raises(ClosureOverflow):
        closure(all_elementary(3, 3), cap=100)


def test_membership():
    G = FiniteMatrixGroup.elementary(2, 3)
    H = G.subgroup([E(2, 1, 2, 1, 3)])
    assert contains(H, E(2, 1, 2, 2, 3))
    assert contains(H, G.identity)
    assert not contains(H, E(2, 2, 1, 1, 3))
    assert H.order == 3


def thm_subgroups(n, p):
    G = FiniteMatrixGroup.elementary(n, p)
    M = G.subgroup([E(n, i, n, 1, p) for i in range(1, n)])
    L = G.subgroup([E(n, n, j, 1, p) for j in range(1, n)])
    return G, M, L


def test_subgroup_lattice_examples():
    G, M, L = thm_subgroups(3, 2)
    P = [E(3, 1, 2, 1, 2), E(3, 2, 1, 1, 2)]
    assert subgroup_leq(M, M.join(P))
    assert not subgroup_leq(M, L)
    assert E(3, 1, 3, 1, 2) not in L
    w = mat_prod([E(3, 1, 3, 1, 2), E(3, 3, 1, -1, 2), E(3, 1, 3, 1, 2)])
    H2 = L.join(P)
    assert subgroup_leq(M, conjugate(w, H2))


def test_conjugation_and_automorphisms_preserve_structure():
    G, M, L = thm_subgroups(3, 3)
    big = M.join(L.generators[:1])
    for c in (G.identity, E(3, 1, 2, 2, 3), mat_prod(G.generators[:4])):
        for H in (M, L, big):
            assert conjugate(c, H).order == H.order
        assert subgroup_leq(conjugate(c, M), conjugate(c, big))
    assert keyset(conjugate(G.identity, M).closure()) == keyset(M.closure())
    ident = inner(G, G.identity)
    assert keyset(apply_automorphism(ident, L).closure()) == keyset(L.closure())


def test_transposition_automorphism():
    G = FiniteMatrixGroup.elementary(3, 2)
    phi = permutation_automorphism(G, [2, 1, 0])
    assert phi(E(3, 1, 2, 1, 2)) == E(3, 3, 2, 1, 2)
    H = G.subgroup([E(3, 1, 2, 1, 2), E(3, 1, 3, 1, 2)])
    assert apply_automorphism(phi, H).order == H.order
    assert phi.compose(phi.inverse())(E(3, 2, 3, 1, 2)) == E(3, 2, 3, 1, 2)


def test_torsion_certificates():
    G = FiniteMatrixGroup.elementary(3, 2)
    Q = G.subgroup([E(3, 1, 2, 1, 2), E(3, 2, 1, 1, 2)])
    cert = abelianization_is_torsion(Q)
    assert cert.result is True and cert.order == 6
    assert "finite, order 6" in cert.note
    assert abelianization_is_torsion(G.subgroup([])).result is True
    assert abelianization_is_torsion(G.whole()).order == 168


def test_perfectness_certificate():
    (w,) = perfectness_certificate([1, 2, 3], 5, targets=[(1, 2, 3)])
    assert w.left == (1, 3, 3) and w.right == (3, 2, 1) and w.verified
    (w,) = perfectness_certificate([1, 2, 3], 2, targets=[(2, 3, 1)])
    assert w.left == (2, 1, 1) and w.right == (1, 3, 1)
    with pytest.raises(NoCertificateError):
        perfectness_certificate([1, 2], 3)


@pytest.mark.parametrize("idx,p,n", [([1, 2, 3], 2, 3), ([1, 2, 3], 5, 4), ([2, 3, 4], 3, 4), ([1, 2, 3, 4], 3, 4)])
def test_perfectness_witnesses_evaluate(idx, p, n):
    ws = perfectness_certificate(idx, p, n)
    assert len(ws) == len(idx) * (len(idx) - 1) * (p - 1)
    for w in ws:
        lhs = commutator(E(n, *w.left, p), E(n, *w.right, p))
        assert lhs == E(n, *w.target, p)
        assert w.verified
