"""Tests for groups, G-complexes, homology, duality, divided orbits, Dold-Kan.

Numeric expectations are either classical (group (co)homology of small
cyclic groups) or recomputed here through an independent route.
"""

import pytest

from opcalc.coeff import QQ, Ring, SparseMatrix, ZZ
from opcalc.complexes import (
    ChainMap,
    CosimplicialModule,
    DegreeOutOfWindow,
    EpsilonComplex,
    EpsilonMap,
    GComplex,
    GroupMismatch,
    Group,
    HomologyDescriptor,
    RingMismatch,
    ShapeUnsupported,
    SimplicialModule,
    TestNotQuasiprojective,
    bar_resolution,
    cone,
    cyclic_generator,
    cyclic_group,
    divided_orbits,
    dual_complex,
    epsilon_counterexample,
    epsilon_tame_test,
    fixed_points,
    hom_complex,
    homology,
    homology_table,
    is_quasi_iso,
    norm,
    normalize,
    normalize_simplicial,
    orbits,
    periodic_resolution,
    perm_sign,
    product_group,
    symmetric_group,
    tame_equivalence_test,
    tensor_complexes,
    tot_sum,
    trivial_group,
)

F2 = Ring.prime_field(2)
F3 = Ring.prime_field(3)
F5 = Ring.prime_field(5)


# ---------------------------------------------------------------------------
# groups


def test_group_orders_and_signs():
    assert symmetric_group(3).order == 6
    assert symmetric_group(4).order == 24
    assert cyclic_group(5).order == 5
    assert product_group(cyclic_group(2), cyclic_group(3)).order == 6
    assert perm_sign((1, 0, 2)) == -1
    assert perm_sign((1, 2, 0)) == 1
    assert perm_sign((0, 1, 2, 3)) == 1


def test_group_rejects_bad_table():
    # a "multiplication" that is not associative: x*y = x except 1*1 = 0
    mult = {(a, b): a for a in (0, 1) for b in (0, 1)}
    mult[(1, 1)] = 0
    with pytest.raises(ValueError):
        Group([0, 1], mult)


def test_cyclic_generator():
    assert cyclic_generator(cyclic_group(6)) == 1
    assert cyclic_generator(product_group(cyclic_group(2), cyclic_group(3))) is not None
    assert cyclic_generator(symmetric_group(3)) is None


def test_group_words_multiply_back():
    g = symmetric_group(4)
    for x in g.elements:
        acc = g.identity
        for s in g.word(x):
            acc = g.mul(acc, s)
        assert acc == x


# ---------------------------------------------------------------------------
# complexes and homology


def test_homology_of_multiplication_by_two():
    x = GComplex(ZZ, trivial_group(), (0, 1), {0: ["a"], 1: ["b"]},
                 {1: SparseMatrix.from_dense(ZZ, [[2]])})
    assert homology(x, 0) == HomologyDescriptor(0, (2,))
    assert homology(x, 1) == HomologyDescriptor(0)
    xq = x.change_ring(QQ)
    assert homology(xq, 0) == HomologyDescriptor(0)
    xf2 = x.change_ring(F2)
    assert homology(xf2, 0).free_rank == 1
    assert homology(xf2, 1).free_rank == 1


def test_degree_out_of_window():
    x = GComplex.single(ZZ)
    with pytest.raises(DegreeOutOfWindow):
        homology(x, 1)
    with pytest.raises(DegreeOutOfWindow):
        homology(x, -1)
    assert homology(x, 0).free_rank == 1


def test_d_squared_checked():
    one = SparseMatrix.identity(ZZ, 1)
    with pytest.raises(ValueError):
        GComplex(ZZ, trivial_group(), (0, 2), {0: ["a"], 1: ["b"], 2: ["c"]},
                 {1: one, 2: one})


def test_equivariance_checked():
    # sign action on the target of a differential that is not sign-equivariant
    c2 = cyclic_group(2)
    act = {1: {0: ([0], [-1]), 1: ([0], [1])}}
    with pytest.raises(ValueError):
        GComplex(ZZ, c2, (0, 1), {0: ["a"], 1: ["b"]},
                 {1: SparseMatrix.identity(ZZ, 1)}, act)


def test_chain_map_validation():
    x = GComplex(ZZ, trivial_group(), (0, 1), {0: ["a"], 1: ["b"]},
                 {1: SparseMatrix.from_dense(ZZ, [[2]])})
    y = GComplex(ZZ, trivial_group(), (0, 1), {0: ["a"], 1: ["b"]},
                 {1: SparseMatrix.from_dense(ZZ, [[3]])})
    with pytest.raises(ValueError):
        ChainMap(x, y, {0: SparseMatrix.identity(ZZ, 1), 1: SparseMatrix.identity(ZZ, 1)})
    # f_0 = 3, f_1 = 2 does commute: 3*2 = 2*3
    ChainMap(x, y, {0: SparseMatrix.from_dense(ZZ, [[3]]),
                    1: SparseMatrix.from_dense(ZZ, [[2]])})


def test_serialization_roundtrip():
    c2 = cyclic_group(2)
    res = periodic_resolution(c2, ZZ, 3)
    obj = res.to_json_obj()
    back = GComplex.from_json_obj(obj)
    assert back.d_min == res.d_min and back.d_max == res.d_max
    for d in range(1, 4):
        assert back.diff[d].entries == res.diff[d].entries


# ---------------------------------------------------------------------------
# group homology of C2 through the periodic resolution


def test_bc2_homology_mod_2():
    res = periodic_resolution(cyclic_group(2), F2, 6)
    ho = orbits(res)
    assert [ho.rank(d) for d in ho.degree_range()] == [1] * 7
    for d in range(6):
        assert homology(ho, d).free_rank == 1


def test_bc2_homology_integral():
    res = periodic_resolution(cyclic_group(2), ZZ, 6)
    ho = orbits(res)
    assert homology(ho, 0) == HomologyDescriptor(1)
    for d in (1, 3, 5):
        assert homology(ho, d) == HomologyDescriptor(0, (2,))
    for d in (2, 4):
        assert homology(ho, d) == HomologyDescriptor(0)


def test_bc3_homology_integral():
    res = periodic_resolution(cyclic_group(3), ZZ, 5)
    ho = orbits(res)
    assert homology(ho, 0) == HomologyDescriptor(1)
    for d in (1, 3):
        assert homology(ho, d) == HomologyDescriptor(0, (3,))
    for d in (2, 4):
        assert homology(ho, d) == HomologyDescriptor(0)


def test_bar_resolution_matches_periodic_for_c2():
    g = cyclic_group(2)
    bar = bar_resolution(g, ZZ, 4)
    ho = orbits(bar)
    assert homology(ho, 0) == HomologyDescriptor(1)
    assert homology(ho, 1) == HomologyDescriptor(0, (2,))
    assert homology(ho, 2) == HomologyDescriptor(0)
    assert homology(ho, 3) == HomologyDescriptor(0, (2,))


def test_bar_resolution_sigma3():
    # H_1(S3; Z) = Z/2, H_2 = 0, H_3 = Z/6
    g = symmetric_group(3)
    bar = bar_resolution(g, ZZ, 4)
    ho = orbits(bar)
    assert homology(ho, 0) == HomologyDescriptor(1)
    assert homology(ho, 1) == HomologyDescriptor(0, (2,))
    assert homology(ho, 2) == HomologyDescriptor(0)
    assert homology(ho, 3) == HomologyDescriptor(0, (6,))


# ---------------------------------------------------------------------------
# orbits, fixed points, norm


def _sign_module(ring):
    c2 = cyclic_group(2)
    act = {1: {0: ([0], [-1])}}
    return GComplex(ring, c2, (0, 0), {0: ["s"]}, {}, act)


def test_sign_orbit_over_z_refused():
    with pytest.raises(ShapeUnsupported):
        orbits(_sign_module(ZZ))


def test_sign_orbit_dies_away_from_char_2():
    assert orbits(_sign_module(F3)).rank(0) == 0
    assert fixed_points(_sign_module(F3)).rank(0) == 0
    assert orbits(_sign_module(QQ)).rank(0) == 0
    # in characteristic 2 the sign is invisible
    assert orbits(_sign_module(F2)).rank(0) == 1
    assert fixed_points(_sign_module(F2)).rank(0) == 1


def test_norm_on_free_orbit_is_iso():
    res = periodic_resolution(cyclic_group(2), F2, 3)
    nm = norm(res)
    for d in range(4):
        assert nm.components[d] == SparseMatrix.identity(F2, 1)


def test_norm_on_trivial_module_is_group_order():
    for ring, expect_zero in ((ZZ, False), (F2, True), (QQ, False)):
        triv = GComplex.single(ring, "pt", 0, cyclic_group(2))
        nm = norm(triv)
        if expect_zero:
            assert nm.components[0].is_zero()
        else:
            assert nm.components[0].get(0, 0) == ring.from_int(2)
    triv3 = GComplex.single(F3, "pt", 0, cyclic_group(3))
    assert norm(triv3).components[0].is_zero()


def test_norm_equals_sum_of_group_elements():
    # iota o Nm o pi = sum_g (g . -) on the original module
    g = symmetric_group(3)
    ring = ZZ
    # regular representation in degree 0
    idx = g.index
    act = {s: {0: ([idx[g.mul(s, h)] for h in g.elements], [1] * 6)} for s in g.generators}
    x = GComplex(ring, g, (0, 0), {0: list(g.elements)}, {}, act)
    nm = norm(x)
    xo = orbits(x)
    xf = fixed_points(x)
    assert xo.rank(0) == 1 and xf.rank(0) == 1
    # pi(e_0) = [orbit], Nm([orbit]) should be the full orbit sum; compare
    # against sum_g g . e_0 which hits every element once
    assert nm.components[0].get(0, 0) == ring.one()


def test_subgroup_fixed_points():
    g = symmetric_group(3)
    idx = g.index
    act = {s: {0: ([idx[g.mul(s, h)] for h in g.elements], [1] * 6)} for s in g.generators}
    x = GComplex(ZZ, g, (0, 0), {0: list(g.elements)}, {}, act)
    # fixed points of a 2-element subgroup of S3 acting on the regular rep:
    # orbits of size 2, so rank 3
    t = (1, 0, 2)
    sub = [g.identity, t]
    assert fixed_points(x, sub).rank(0) == 3
    assert fixed_points(x).rank(0) == 1


# ---------------------------------------------------------------------------
# hom complexes and duality


def test_hom_shift_oracle():
    p = GComplex(ZZ, trivial_group(), (0, 2), {1: ["a"]}, {})
    x = GComplex(ZZ, trivial_group(), (-1, 1), {0: ["b"]}, {})
    h = hom_complex(p, x)
    assert {d: h.rank(d) for d in h.degree_range() if h.rank(d)} == {-1: 1}


def test_hom_equivariant_rank():
    # Hom_G(R[G], M) = M, here M = R[G] of rank 2 over R
    c2 = cyclic_group(2)
    pg = GComplex(ZZ, c2, (0, 0), {0: ["e", "t"]}, {}, {1: {0: ([1, 0], [1, 1])}})
    assert hom_complex(pg, pg).rank(0) == 2


def test_hom_mismatches():
    p = GComplex.single(ZZ)
    x = GComplex.single(QQ)
    with pytest.raises(RingMismatch):
        hom_complex(p, x)
    y = GComplex.single(ZZ, "pt", 0, cyclic_group(2))
    with pytest.raises(GroupMismatch):
        hom_complex(p, y)


def test_dual_of_resolution_is_group_cohomology():
    res = periodic_resolution(cyclic_group(2), F2, 5)
    cd = dual_complex(res)
    assert (cd.d_min, cd.d_max) == (-5, 0)
    fp = fixed_points(cd)
    for d in range(-4, 1):
        assert homology(fp, d).free_rank == 1
    # integral group cohomology of C2: H^0 = Z, H^even>0 = Z/2, H^odd = 0
    resz = periodic_resolution(cyclic_group(2), ZZ, 5)
    fpz = fixed_points(dual_complex(resz))
    assert homology(fpz, 0) == HomologyDescriptor(1)
    assert homology(fpz, -1) == HomologyDescriptor(0)
    assert homology(fpz, -2) == HomologyDescriptor(0, (2,))
    assert homology(fpz, -3) == HomologyDescriptor(0)
    assert homology(fpz, -4) == HomologyDescriptor(0, (2,))


# ---------------------------------------------------------------------------
# quasi-isomorphism and tame equivalence


def test_cone_of_identity_is_acyclic():
    res = periodic_resolution(cyclic_group(2), ZZ, 4)
    ok, bad = is_quasi_iso(ChainMap.identity(res))
    assert ok and bad is None


def test_epsilon_counterexample():
    for ring in (QQ, F2, F5):
        _, _, g = epsilon_counterexample(ring, width=4)
        verdict = epsilon_tame_test(g)
        assert verdict["quasi_iso"] is True
        assert verdict["base_changed_quasi_iso"] is False
        assert verdict["witness_degree"] is not None


def test_epsilon_complex_rejects_z():
    with pytest.raises(Exception):
        EpsilonComplex(ZZ, (0, 0), {0: 1}, {}, {})


def test_epsilon_tame_test_detects_honest_iso():
    # identity map of one complex: tame in every degree
    X, _, _ = epsilon_counterexample(QQ, width=3)
    one = SparseMatrix.identity(QQ, 1)
    idmap = EpsilonMap(X, X, {d: one for d in range(-3, 1)}, {})
    verdict = epsilon_tame_test(idmap)
    assert verdict["quasi_iso"] and verdict["base_changed_quasi_iso"]


def _ec2_composite(L=5):
    c2 = cyclic_group(2)
    cstar = periodic_resolution(c2, F2, L)
    cdual = dual_complex(cstar)
    allones = SparseMatrix.from_dense(F2, [[1, 1], [1, 1]])
    return cstar, cdual, ChainMap(cstar, cdual, {0: allones})


def test_ec2_composite_is_quasi_iso_but_not_tame():
    L = 5
    cstar, cdual, comp = _ec2_composite(L)
    ok, _ = is_quasi_iso(comp, range(-L + 1, L))
    assert ok
    t = GComplex.single(F2, "pt", 0, cyclic_group(2))
    res = tame_equivalence_test(comp, [t], degrees=range(-L + 1, L))
    assert res[0]["verdict"] == "witness"
    assert res[0]["witness_degree"] is not None


def test_tame_test_accepts_equivalences():
    res = periodic_resolution(cyclic_group(2), F2, 4)
    t = GComplex.single(F2, "pt", 0, cyclic_group(2))
    out = tame_equivalence_test(ChainMap.identity(res), [t], degrees=range(-3, 4))
    assert out[0]["verdict"] == "equivalence"


def test_tame_test_rejects_wrong_group():
    res = periodic_resolution(cyclic_group(2), F2, 3)
    t = GComplex.single(F2, "pt", 0, cyclic_group(3))
    with pytest.raises(TestNotQuasiprojective):
        tame_equivalence_test(ChainMap.identity(res), [t])


# ---------------------------------------------------------------------------
# divided orbits


def test_divided_orbits_of_resolution_is_bc2():
    res = periodic_resolution(cyclic_group(2), F2, 6)
    ho, window = divided_orbits(res, "boundedBelowProjective", cap=4)
    assert window == (0, 3)
    for d in range(window[0], window[1] + 1):
        assert homology(ho, d).free_rank == 1


def test_divided_orbits_of_free_module():
    c2 = cyclic_group(2)
    free = GComplex(ZZ, c2, (0, 0), {0: ["e", "t"]}, {}, {1: {0: ([1, 0], [1, 1])}})
    out, window = divided_orbits(free, "boundedBelowProjective", cap=3)
    assert homology(out, 0) == HomologyDescriptor(1)
    for d in range(1, window[1] + 1):
        assert homology(out, d).is_zero()
    strict, _ = divided_orbits(free, "boundedAboveFree")
    assert strict.rank(0) == 1


def test_divided_orbits_refuses_non_free():
    triv = GComplex.single(F2, "pt", 0, cyclic_group(2))
    with pytest.raises(ShapeUnsupported):
        divided_orbits(triv, "boundedBelowProjective")
    with pytest.raises(ShapeUnsupported):
        divided_orbits(triv, "boundedAboveFree")
    with pytest.raises(ShapeUnsupported):
        divided_orbits(triv, "somethingElse")


def test_divided_orbits_bounded_above_equals_fixed_points():
    # for free complexes the norm is an iso, so orbits and fixed points agree
    res = periodic_resolution(cyclic_group(3), F3, 4)
    cd = dual_complex(res)
    so, _ = divided_orbits(cd, "boundedAboveFree")
    fp = fixed_points(cd)
    for d in range(-3, 1):
        assert homology(so, d) == homology(fp, d)


# ---------------------------------------------------------------------------
# Dold-Kan


def _delta1_simplices(d):
    return [tuple([0] * k + [1] * (d + 1 - k)) for k in range(d + 2)]


def _functions_on_delta1(ring, n):
    levels = {d: _delta1_simplices(d) for d in range(n + 1)}
    index = {d: {s: i for i, s in enumerate(levels[d])} for d in levels}
    cofaces = {d: {i: SparseMatrix(ring, len(levels[d + 1]), len(levels[d]),
               {(index[d + 1][x], index[d][x[:i] + x[i + 1:]]): ring.one()
                for x in levels[d + 1]})
               for i in range(d + 2)} for d in range(n)}
    codegens = {d: {i: SparseMatrix(ring, len(levels[d - 1]), len(levels[d]),
                {(index[d - 1][y], index[d][y[:i] + (y[i],) + y[i:]]): ring.one()
                 for y in levels[d - 1]})
                for i in range(d)} for d in range(1, n + 1)}
    return CosimplicialModule(ring, levels, cofaces, codegens)


def _chains_on_delta1(ring, n, keep=lambda s: True):
    levels = {d: [s for s in _delta1_simplices(d) if keep(s)] for d in range(n + 1)}
    index = {d: {s: i for i, s in enumerate(levels[d])} for d in levels}
    faces = {d: {i: SparseMatrix(ring, len(levels[d - 1]), len(levels[d]),
             {(index[d - 1][x[:i] + x[i + 1:]], index[d][x]): ring.one()
              for x in levels[d] if x[:i] + x[i + 1:] in index[d - 1]})
             for i in range(d + 1)} for d in range(1, n + 1)}
    degens = {d: {i: SparseMatrix(ring, len(levels[d + 1]), len(levels[d]),
              {(index[d + 1][x[:i] + (x[i],) + x[i:]], index[d][x]): ring.one()
               for x in levels[d] if x[:i] + (x[i],) + x[i:] in index[d + 1]})
              for i in range(d + 1)} for d in range(n)}
    return SimplicialModule(ring, levels, faces, degens)


def test_constant_cosimplicial_normalizes_to_degree_zero():
    one = SparseMatrix.identity(QQ, 1)
    levels = {d: [f"c{d}"] for d in range(5)}
    cofaces = {d: {i: one for i in range(d + 2)} for d in range(4)}
    codegens = {d: {i: one for i in range(d)} for d in range(1, 5)}
    c = CosimplicialModule(QQ, levels, cofaces, codegens)
    n = normalize(c)
    assert [n.rank(d) for d in range(-4, 1)] == [0, 0, 0, 0, 1]
    assert homology(n, 0).free_rank == 1


def test_delta1_function_complex():
    n = normalize(_functions_on_delta1(ZZ, 4))
    assert [n.rank(d) for d in range(-4, 1)] == [0, 0, 0, 1, 2]
    assert homology(n, 0) == HomologyDescriptor(1)
    for d in (-1, -2, -3):
        assert homology(n, d).is_zero()


def test_delta1_chain_complex():
    n = normalize_simplicial(_chains_on_delta1(ZZ, 4))
    assert [n.rank(d) for d in range(0, 5)] == [2, 1, 0, 0, 0]
    assert homology(n, 0) == HomologyDescriptor(1)
    assert homology(n, 1).is_zero()


def test_boundary_of_delta1_has_two_components():
    n = normalize_simplicial(_chains_on_delta1(ZZ, 3, keep=lambda s: len(set(s)) == 1))
    assert homology(n, 0) == HomologyDescriptor(2)


def _conjugated_delta1(ring, n):
    """Conjugate the function complex by unipotent matrices to force the
    generic kernel path through normalize."""
    c = _functions_on_delta1(ring, n)

    def upper(nn):
        ent = {(i, i): ring.one() for i in range(nn)}
        for i in range(nn - 1):
            ent[(i, i + 1)] = ring.one()
        return SparseMatrix(ring, nn, nn, ent)

    def upper_inv(nn):
        ent = {}
        for i in range(nn):
            for j in range(i, nn):
                ent[(i, j)] = ring.from_int((-1) ** (j - i))
        return SparseMatrix(ring, nn, nn, ent)

    mats = {d: upper(c.rank(d)) for d in range(n + 1)}
    invs = {d: upper_inv(c.rank(d)) for d in range(n + 1)}
    for d in mats:
        assert mats[d].matmul(invs[d]) == SparseMatrix.identity(ring, c.rank(d))
    cofaces = {d: {i: mats[d + 1].matmul(c.coface(d, i)).matmul(invs[d])
               for i in range(d + 2)} for d in range(n)}
    codegens = {d: {i: mats[d - 1].matmul(c.codegeneracy(d, i)).matmul(invs[d])
                for i in range(d)} for d in range(1, n + 1)}
    levels = {d: [("v", d, k) for k in range(c.rank(d))] for d in range(n + 1)}
    return CosimplicialModule(ring, levels, cofaces, codegens)


def test_normalize_is_basis_independent():
    for ring in (QQ, ZZ, F3):
        n = normalize(_conjugated_delta1(ring, 3))
        assert homology(n, 0).free_rank == 1
        assert not homology(n, 0).torsion
        for d in (-1, -2):
            assert homology(n, d).is_zero()


def test_cosimplicial_identities_checked():
    c = _functions_on_delta1(ZZ, 3)
    broken = dict(c.codegeneracies)
    broken[1] = {0: SparseMatrix(ZZ, c.rank(0), c.rank(1))}
    with pytest.raises(ValueError):
        CosimplicialModule(ZZ, c.levels, c.cofaces, broken)


def test_simplicial_identities_checked():
    s = _chains_on_delta1(ZZ, 3)
    broken = dict(s.faces)
    broken[1] = {i: SparseMatrix(ZZ, s.rank(0), s.rank(1)) for i in range(2)}
    with pytest.raises(ValueError):
        SimplicialModule(ZZ, s.levels, broken, s.degeneracies)


# ---------------------------------------------------------------------------
# tensors and total complexes


def test_tensor_with_unit():
    res = periodic_resolution(cyclic_group(2), ZZ, 3)
    unit = GComplex.single(ZZ, "*", 0, cyclic_group(2))
    t = tensor_complexes(res, unit, diagonal_group=cyclic_group(2))
    ho = orbits(t)
    for d in range(3):
        assert homology(ho, d) == homology(orbits(res), d)


def test_tot_sum_single_cell():
    t = tot_sum({(0, 0): ["a"]}, {}, {}, ZZ)
    assert homology(t, 0).free_rank == 1


def test_tot_sum_identity_square_is_acyclic():
    one = SparseMatrix.identity(F5, 1)
    cells = {(0, 0): ["a"], (1, 0): ["b"], (0, 1): ["c"], (1, 1): ["d"]}
    t = tot_sum(cells, {(1, 0): one, (1, 1): one}, {(0, 1): one, (1, 1): one}, F5)
    assert [t.rank(d) for d in range(0, 3)] == [1, 2, 1]
    for d in range(0, 3):
        assert homology(t, d).is_zero()


def test_homology_table():
    res = periodic_resolution(cyclic_group(2), F2, 3)
    table = homology_table(orbits(res))
    assert set(table) == {0, 1, 2, 3}
