"""Tests for symmetric sequences and their three products.

Rank expectations come from direct counts (ordered set partitions times
module ranks); isomorphism claims are checked by explicit relabelings that
must match actions and differentials, not just dimensions.
"""

import json

import pytest

from opcalc.coeff import Ring, SparseMatrix, ZZ, row_reduce, smith_normal_form
from opcalc.complexes import GComplex, RingMismatch, fixed_points, homology, orbits
from opcalc.symseq import (
    DivergenceGuard,
    Overflow,
    SymSeq,
    SymSeqMap,
    TruncationPolicy,
    compose,
    day_tensor,
    direct_sum,
    interchange,
    lev_tensor,
    norm_map,
)
from opcalc.symseq import _sym

F2 = Ring.prime_field(2)
F3 = Ring.prime_field(3)


# ---------------------------------------------------------------------------
# small building blocks


def free2(ring, deg=0, labs=("e", "t")):
    """The regular representation of Sigma_2 in one degree."""
    g = _sym(2)
    act = {g.generators[0]: {deg: ([1, 0], [1, 1])}}
    return GComplex(ring, g, (deg, deg), {deg: list(labs)}, {}, act)


def triv2(ring):
    g = _sym(2)
    act = {g.generators[0]: {0: ([0], [1])}}
    return GComplex(ring, g, (0, 0), {0: ["x"]}, {}, act)


def sign2(ring):
    g = _sym(2)
    act = {g.generators[0]: {0: ([0], [-1])}}
    return GComplex(ring, g, (0, 0), {0: ["s"]}, {}, act)


def one_r(ring, r, deg=0, lab="c"):
    """Trivial rank-one representation of Sigma_r in one degree."""
    g = _sym(r)
    act = {s: {deg: ([0], [1])} for s in g.generators}
    return GComplex(ring, g, (deg, deg), {deg: [lab]}, {}, act)


def arity1_interval(ring):
    """Two degrees at arity 1 with the identity differential (acyclic)."""
    return GComplex(ring, _sym(1), (0, 1), {0: ["i0"], 1: ["i1"]},
                    {1: SparseMatrix.identity(ring, 1)})


def free2_two_degrees(ring):
    """R[Sigma_2] in degrees 0 and 1 with the identity differential."""
    g = _sym(2)
    act = {g.generators[0]: {0: ([1, 0], [1, 1]), 1: ([1, 0], [1, 1])}}
    return GComplex(ring, g, (0, 1), {0: ["e0", "t0"], 1: ["e1", "t1"]},
                    {1: SparseMatrix.identity(ring, 2)}, act)


def as_matrix(ring, pair, n):
    perm, signs = pair
    return SparseMatrix(ring, n, n,
                        {(perm[i], i): ring.from_int(signs[i]) for i in range(n)})


def arity0_points(ring, labs=("a", "b")):
    return GComplex(ring, _sym(0), (0, 0), {0: list(labs)}, {})


# ---------------------------------------------------------------------------
# constructors and validation


def test_constructor_validation():
    with pytest.raises(ValueError):
        SymSeq(ZZ, {3: triv2(ZZ)})  # wrong symmetric group
    with pytest.raises(RingMismatch):
        SymSeq(ZZ, {2: triv2(F2)})
    with pytest.raises(ValueError):
        SymSeq(ZZ, {2: triv2(ZZ)}, r_max=1)
    # zero components are dropped
    empty = GComplex(ZZ, _sym(1), (0, 0), {0: []}, {})
    x = SymSeq(ZZ, {1: empty, 2: triv2(ZZ)})
    assert x.arities() == [2]
    assert SymSeq(ZZ, {}).is_zero()


def test_policy_validation():
    with pytest.raises(ValueError):
        TruncationPolicy(3, 1, 0)
    with pytest.raises(ValueError):
        TruncationPolicy(3, 0, 1, "explode")


def test_direct_sum_tags_summands():
    s = direct_sum(SymSeq(ZZ, {2: triv2(ZZ)}),
                   SymSeq(ZZ, {1: one_r(ZZ, 1, lab="u")}))
    assert s.arities() == [1, 2]
    assert s.component(2).basis[0] == [("l", "x")]
    assert s.component(1).basis[0] == [("r", "u")]


def test_json_roundtrip_is_canonical():
    x = SymSeq(ZZ, {1: arity1_interval(ZZ), 2: free2(ZZ, 1)})
    blob = json.dumps(x.to_json_obj(), sort_keys=True)
    back = SymSeq.from_json_obj(json.loads(blob))
    assert back.arities() == x.arities() and back.r_max == x.r_max
    for r in x.arities():
        cx, cb = x.component(r), back.component(r)
        assert (cx.d_min, cx.d_max) == (cb.d_min, cb.d_max)
        for d in cx.degree_range():
            assert cb.rank(d) == cx.rank(d)
    assert json.dumps(back.to_json_obj(), sort_keys=True) == blob


# ---------------------------------------------------------------------------
# Day tensor


@pytest.mark.parametrize("ring", [ZZ, F2])
def test_day_tensor_of_points(ring):
    pt = SymSeq(ring, {1: one_r(ring, 1, lab="p")})
    t = day_tensor(pt, pt)
    # two interleavings of one point with one point, freely permuted
    assert t.arities() == [2] and t.rank(2, 0) == 2
    assert orbits(t.component(2)).rank(0) == 1
    u = SymSeq.day_unit(ring)
    t2 = day_tensor(u, pt)
    assert t2.arities() == [1] and t2.rank(1, 0) == 1


def test_day_tensor_rank_count():
    # C(4,2) shuffles times 2x2 module ranks
    x2 = SymSeq(ZZ, {2: free2(ZZ)})
    t = day_tensor(x2, x2)
    assert t.arities() == [4] and t.rank(4, 0) == 6 * 4


def test_day_overflow_policy():
    x2 = SymSeq(ZZ, {2: free2(ZZ)})
    with pytest.raises(Overflow):
        day_tensor(x2, x2, TruncationPolicy(3, 0, 0))
    t = day_tensor(x2, x2, TruncationPolicy(3, 0, 0, "silently_truncate_with_flag"))
    assert t.is_zero() and t.truncated


# ---------------------------------------------------------------------------
# levelwise tensor


def test_lev_unit_and_zero():
    com = SymSeq.constant(ZZ, 3)
    y = SymSeq(ZZ, {1: one_r(ZZ, 1), 2: free2(ZZ), 3: one_r(ZZ, 3)})
    l = lev_tensor(com, y)
    for r in (1, 2, 3):
        assert l.rank(r, 0) == y.rank(r, 0)
    assert lev_tensor(y, SymSeq(ZZ, {})).is_zero()


# ---------------------------------------------------------------------------
# composition: unit laws checked as honest isomorphisms


def _check_right_unit(x, ring):
    """x o 1 = x via (a, singleton blocks) |-> sign . (p a)."""
    xo = compose(x, SymSeq.compose_unit(ring))
    for r in x.arities():
        c, xc = xo.component(r), x.component(r)
        xidx = {d: {b: i for i, b in enumerate(xc.basis.get(d, []))}
                for d in xc.degree_range()}
        assert (c.d_min, c.d_max) == (xc.d_min, xc.d_max)
        phi = {}  # degree -> list of (sign, x basis label)
        for d in xc.degree_range():
            assert c.rank(d) == xc.rank(d), (r, d)
            out = []
            for (dx, a), blocks in c.basis.get(d, []):
                p = tuple(blk[0] for blk, _ in blocks)
                perm, signs = xc.full_action(p, dx)
                i = xidx[dx][a]
                out.append((signs[i], xc.basis[dx][perm[i]]))
            phi[d] = out
        for g in c.group.generators:
            for d in xc.degree_range():
                pq, sq = c.full_action(g, d)
                px, sx = xc.full_action(g, d)
                for i in range(c.rank(d)):
                    s_i, u_i = phi[d][i]
                    s_j, u_j = phi[d][pq[i]]
                    k = xidx[d][u_i]
                    assert u_j == xc.basis[d][px[k]], (r, d, i)
                    assert sq[i] * s_j == s_i * sx[k], (r, d, i)
        for d in range(xc.d_min + 1, xc.d_max + 1):
            for j in range(c.rank(d)):
                s_j, u_j = phi[d][j]
                img_q = c.diff[d].apply({j: ring.one()})
                via_phi = {}
                for i, v in img_q.items():
                    s_i, u_i = phi[d - 1][i]
                    via_phi[u_i] = ring.mul(v, ring.mul(ring.from_int(s_i),
                                                        ring.from_int(s_j)))
                img_x = xc.diff[d].apply({xidx[d][u_j]: ring.one()})
                want = {xc.basis[d - 1][i]: v for i, v in img_x.items()}
                assert via_phi == want, (r, d, j)


def _check_left_unit(x, ring):
    """1 o x = x on the nose: one block carrying all of the points."""
    ox = compose(SymSeq.compose_unit(ring), x)
    for r in x.arities():
        c, xc = ox.component(r), x.component(r)
        for d in xc.degree_range():
            assert c.rank(d) == xc.rank(d)
            for i, (_, blocks) in enumerate(c.basis.get(d, [])):
                assert len(blocks) == 1 and blocks[0][1][1] == xc.basis[d][i]
        for g in c.group.generators:
            for d in xc.degree_range():
                assert c.full_action(g, d) == xc.full_action(g, d), (r, d)
        for d in range(xc.d_min + 1, xc.d_max + 1):
            assert c.diff[d].entries == xc.diff[d].entries


@pytest.mark.parametrize("ring", [ZZ, F2])
def test_compose_unit_laws(ring):
    x = SymSeq(ring, {1: one_r(ring, 1), 2: free2_two_degrees(ring),
                      3: one_r(ring, 3)})
    _check_right_unit(x, ring)
    _check_left_unit(x, ring)


def test_compose_unit_laws_sign_rep():
    # signs in the relabeling permutation must cancel exactly
    x = SymSeq(F3, {2: sign2(F3)})
    _check_right_unit(x, F3)
    _check_left_unit(x, F3)


# ---------------------------------------------------------------------------
# composition with arity-zero operations; orbit vs invariant models


@pytest.mark.parametrize("ring", [ZZ, F2])
def test_compose_free_both_models_and_norm(ring):
    xf = SymSeq(ring, {2: free2(ring)})
    y0 = SymSeq(ring, {0: arity0_points(ring)})
    co = compose(xf, y0, "orbits")
    assert co.arities() == [0] and co.rank(0, 0) == 4
    pol = TruncationPolicy(4, -2, 2)
    ci = compose(xf, y0, "invariants", pol)
    assert ci.rank(0, 0) == 4
    # free diagonal action: the norm is an isomorphism over any ring
    m = norm_map(xf, y0, pol).components[0].components[0]
    if ring.kind == "Z":
        diag, rank = smith_normal_form(m)
        assert rank == 4 and all(e == 1 for e in diag[:4])
    else:
        rank, _ = row_reduce(m)
        assert rank == 4


def test_norm_kills_trivial_rep_mod_two():
    xt = SymSeq(F2, {2: triv2(F2)})
    y1 = SymSeq(F2, {0: arity0_points(F2, labs=("a",))})
    pol = TruncationPolicy(4, -2, 2)
    assert compose(xt, y1, "orbits").rank(0, 0) == 1
    assert compose(xt, y1, "invariants", pol).rank(0, 0) == 1
    assert norm_map(xt, y1, pol).components[0].components[0].is_zero()


@pytest.mark.parametrize("ring", [ZZ, F2, F3])
def test_norm_iso_without_arity_zero(ring):
    # nonempty disjoint blocks are distinct, so the diagonal action is free
    xt = SymSeq(ring, {2: triv2(ring)})
    yy = SymSeq(ring, {1: one_r(ring, 1)})
    m = norm_map(xt, yy).components[2].components[0]
    assert m.rows == m.cols == 1
    assert dict(m.entries) == {(0, 0): ring.one()}


def test_divergence_guard():
    xt = SymSeq(ZZ, {2: triv2(ZZ)})
    y0 = SymSeq(ZZ, {0: arity0_points(ZZ, labs=("a",))})
    with pytest.raises(DivergenceGuard):
        compose(xt, y0, "invariants")
    with pytest.raises(DivergenceGuard):
        norm_map(xt, y0)


def test_compose_overflow_policy():
    x = SymSeq(ZZ, {2: free2(ZZ)})
    with pytest.raises(Overflow):
        compose(x, x, policy=TruncationPolicy(3, -5, 5))
    t = compose(x, x, policy=TruncationPolicy(3, -5, 5, "silently_truncate_with_flag"))
    assert t.is_zero() and t.truncated
    with pytest.raises(Overflow):
        compose(x, x, policy=TruncationPolicy(4, 1, 2))


# ---------------------------------------------------------------------------
# associativity, additivity, equivariance of the norm


CAP4 = TruncationPolicy(4, -10, 10, "silently_truncate_with_flag")


@pytest.mark.parametrize("ring", [ZZ, F2])
def test_compose_associative_up_to_arity_four(ring):
    # all inputs live in arity >= 1, so nothing survives beyond arity 4
    # and the truncation is exact
    x = SymSeq(ring, {1: arity1_interval(ring), 2: free2(ring, 1)})
    y = SymSeq(ring, {1: one_r(ring, 1, lab="y1"), 2: free2(ring, 0, ("f", "g"))})
    z = SymSeq(ring, {1: one_r(ring, 1, lab="z1"), 2: free2(ring, 0, ("u", "v"))})
    left = compose(compose(x, y, policy=CAP4), z, policy=CAP4)
    right = compose(x, compose(y, z, policy=CAP4), policy=CAP4)
    assert left.arities() == right.arities() == [1, 2, 3, 4]
    ranks = {}
    for n in left.arities():
        lc, rc = left.component(n), right.component(n)
        assert (lc.d_min, lc.d_max) == (rc.d_min, rc.d_max), n
        for d in lc.degree_range():
            assert lc.rank(d) == rc.rank(d), (n, d)
            assert homology(lc, d) == homology(rc, d), (n, d)
            assert fixed_points(lc).rank(d) == fixed_points(rc).rank(d), (n, d)
        ranks[n] = [lc.rank(d) for d in lc.degree_range()]
    assert ranks == {1: [1, 1], 2: [4, 6], 3: [12, 36], 4: [24, 216]}


def test_compose_additive_in_left_argument():
    x1 = SymSeq(ZZ, {2: free2(ZZ)})
    x2 = SymSeq(ZZ, {1: arity1_interval(ZZ)})
    y = SymSeq(ZZ, {1: one_r(ZZ, 1, lab="y1"), 2: free2(ZZ, 0, ("f", "g"))})
    s = compose(direct_sum(x1, x2), y)
    a, b = compose(x1, y), compose(x2, y)
    for n in s.arities():
        for d in s.component(n).degree_range():
            assert s.rank(n, d) == a.rank(n, d) + b.rank(n, d), (n, d)


def test_norm_map_is_equivariant():
    xt = SymSeq(ZZ, {2: triv2(ZZ)})
    yy = SymSeq(ZZ, {1: one_r(ZZ, 1), 2: free2(ZZ, 1)})
    nm = norm_map(xt, yy)
    assert isinstance(nm, SymSeqMap)
    for n, cm in nm.components.items():
        src, tgt = cm.source, cm.target
        for g in _sym(n).generators:
            for d in src.degree_range():
                m = cm.components.get(d)
                if m is None or src.rank(d) == 0:
                    continue
                lhs = m.matmul(as_matrix(ZZ, src.full_action(g, d), src.rank(d)))
                rhs = as_matrix(ZZ, tgt.full_action(g, d), tgt.rank(d)).matmul(m)
                assert lhs.entries == rhs.entries, (n, d)


# ---------------------------------------------------------------------------
# interchange of composition against the levelwise tensor


@pytest.mark.parametrize("ring", [ZZ, F2])
def test_interchange_is_equivariant_chain_map(ring):
    # construction validates the chain map property internally
    a = SymSeq(ring, {1: one_r(ring, 1, lab="a1"), 2: free2(ring, 0, ("ae", "at"))})
    b = SymSeq(ring, {1: arity1_interval(ring), 2: free2(ring, 1, ("be", "bt"))})
    c = SymSeq(ring, {1: one_r(ring, 1, lab="c1"), 2: one_r(ring, 2, lab="c2")})
    d = SymSeq(ring, {1: one_r(ring, 1, lab="d1"), 2: free2(ring, 1, ("de", "dt"))})
    ic = interchange(a, b, c, d)
    assert any(not m.is_zero() for cm in ic.components.values()
               for m in cm.components.values())
    sizes = {}
    for n, cm in ic.components.items():
        src, tgt = cm.source, cm.target
        for g in _sym(n).generators:
            for deg in range(cm.d_min, cm.d_max + 1):
                m = cm.components[deg]
                lhs = m.matmul(as_matrix(ring, src.full_action(g, deg), src.rank(deg)))
                rhs = as_matrix(ring, tgt.full_action(g, deg), tgt.rank(deg)).matmul(m)
                assert lhs.entries == rhs.entries, (n, deg)
        sizes[n] = sum(len(m.entries) for m in cm.components.values())
    assert sizes == {1: 2, 2: 12, 3: 48, 4: 96}


@pytest.mark.parametrize("ring", [ZZ, F2])
def test_interchange_second_corpus_all_elements(ring):
    def two_seq(rg):
        c1 = GComplex(rg, _sym(1), (0, 1), {0: ["a"], 1: ["b"]}, {})
        c2 = GComplex(rg, _sym(2), (1, 1), {1: ["s"]}, {},
                      {_sym(2).generators[0]: {1: ([0], [-1])}})
        return SymSeq(rg, {1: c1, 2: c2})

    def one_seq(rg):
        return SymSeq(rg, {1: one_r(rg, 1, lab="u"), 2: one_r(rg, 2, lab="v")})

    phi = interchange(two_seq(ring), one_seq(ring), one_seq(ring), two_seq(ring))
    nonzero = False
    for n, cm in phi.components.items():
        src, tgt = cm.source, cm.target
        for deg in range(cm.d_min, cm.d_max + 1):
            m = cm.components[deg]
            nonzero = nonzero or bool(m.entries)
            for g in src.group.elements:
                lhs = m.matmul(as_matrix(ring, src.full_action(g, deg), src.rank(deg)))
                rhs = as_matrix(ring, tgt.full_action(g, deg), tgt.rank(deg)).matmul(m)
                assert lhs.entries == rhs.entries, (n, deg, g)
    assert nonzero
