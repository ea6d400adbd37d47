"""Dg-operads and dg-cooperads over exact coefficient rings.

Operations are structure-constant packages over a SymSeq carrier: partial
compositions for operads, partial cocompositions for cooperads, both with
exhaustive axiom checkers.  On top of that sit the free operad on a symmetric
sequence, the bar and cobar constructions on complexes of rooted trees, the
linear-dual operad of the bar (the chain-level Koszul dual), the Koszul
complex, and the bar of an algebra.

Tree conventions, fixed once for the whole module:
  * trees are ("L", i) leaves and ("N", (degree, label), children) vertices;
  * a tree is canonical when every vertex lists its children by ascending
    minimal leaf; reordering children transports the vertex label along the
    symmetric group action and pays the Koszul sign of the block shuffle;
  * the tensor factor order of a tree is root-first depth-first, and every
    sign below is computed against that order.  The convention is certified
    by d^2 = 0 and by the homology of the worked examples, not by decree.
"""

from __future__ import annotations

import itertools

from .coeff import OpcalcError, Ring, SparseMatrix
from .complexes import ChainMap, GComplex
from .symseq import (
    Overflow,
    SymSeq,
    SymSeqMap,
    TruncationPolicy,
    compose,
    koszul_reorder_sign,
)
from .symseq import _compose_arity, _sym


class NotReduced(OpcalcError):
    pass


class NotCoreduced(OpcalcError):
    pass


class InfiniteRankInWindow(OpcalcError):
    pass


class StructureMapsNotAssociative(OpcalcError):
    pass


# ---------------------------------------------------------------------------
# rooted trees


def _leaf_min(t):
    while t[0] == "N":
        t = t[2][0]
    return t[1]


def _leaves(t):
    if t[0] == "L":
        return (t[1],)
    out = []
    for c in t[2]:
        out.extend(_leaves(c))
    return tuple(out)


def _arity(t):
    return len(_leaves(t))


def _dfs_labels(t, out=None):
    """Vertex labels (degree, label) in root-first depth-first order."""
    if out is None:
        out = []
    if t[0] == "N":
        out.append(t[1])
        for c in t[2]:
            _dfs_labels(c, out)
    return out


def _tree_weight(t, shift):
    return sum(d + shift for d, _ in _dfs_labels(t))


def _tree_degree(t, shift):
    return _tree_weight(t, shift)


def _relabel_leaves(t, f):
    if t[0] == "L":
        return ("L", f(t[1]))
    return ("N", t[1], tuple(_relabel_leaves(c, f) for c in t[2]))


def _canon(t, x: SymSeq, shift, xidx=None):
    """Canonical form of a planar tree.  Returns (tree, sign)."""
    if t[0] == "L":
        return t, 1
    _, (d, lab), kids = t
    sign = 1
    cs = []
    for c in kids:
        cc, s = _canon(c, x, shift, xidx)
        sign *= s
        cs.append(cc)
    mins = [_leaf_min(c) for c in cs]
    if any(mins[i] > mins[i + 1] for i in range(len(mins) - 1)):
        order = sorted(range(len(cs)), key=lambda i: mins[i])
        p = [0] * len(cs)
        for j, i in enumerate(order):
            p[i] = j
        sign *= koszul_reorder_sign([_tree_weight(c, shift) for c in cs], tuple(p))
        comp = x.component(len(cs))
        perm, signs = comp.full_action(tuple(p), d)
        i = (xidx[len(cs)][d][lab] if xidx is not None
             else comp.basis[d].index(lab))
        lab = comp.basis[d][perm[i]]
        sign *= signs[i]
        cs = [cs[i] for i in order]
    return ("N", (d, lab), tuple(cs)), sign


def _act_tree(t, g, x, shift, xidx=None):
    """Leaf relabeling by a permutation, followed by canonicalization."""
    return _canon(_relabel_leaves(t, lambda i: g[i]), x, shift, xidx)


def _set_partitions(s, k):
    """Unordered partitions of the tuple s into k nonempty blocks,
    each block sorted, blocks listed by ascending minimum."""
    if k == 1:
        yield (tuple(s),)
        return
    if len(s) < k:
        return
    first, rest = s[0], s[1:]
    # first stays in the first block; choose its companions
    for size in range(0, len(rest) - k + 2):
        for companions in itertools.combinations(rest, size):
            block = (first,) + companions
            remaining = tuple(e for e in rest if e not in companions)
            for tail in _set_partitions(remaining, k - 1):
                yield (block,) + tail


def _enum_trees(leafset, x: SymSeq, depth, min_vertex_arity):
    """All canonical trees on the given leaves with vertices labelled by
    basis elements of x, nesting at most `depth` vertices deep."""
    out = []
    if len(leafset) == 1:
        out.append(("L", leafset[0]))
    if depth == 0:
        return out
    for k in x.arities():
        if k < min_vertex_arity or k > len(leafset):
            continue
        if k == 1 and len(leafset) > 1:
            continue
        comp = x.component(k)
        labels = [(d, lab) for d in comp.degree_range() for lab in comp.basis[d]]
        for blocks in _set_partitions(leafset, k):
            subtree_choices = [_enum_trees(b, x, depth - 1, min_vertex_arity)
                               for b in blocks]
            if any(not c for c in subtree_choices):
                continue
            for kids in itertools.product(*subtree_choices):
                for dl in labels:
                    out.append(("N", dl, tuple(kids)))
    return out


def _graft(ta, k, tb, shift):
    """Replace leaf k of ta by tb.  Returns (tree, sign).

    Both inputs canonical; the output is canonical because the leaf
    relabeling is monotone on minima.  The sign moves tb's vertex block
    from the end of the tensor to the position where leaf k is visited.
    """
    s = _arity(tb)
    after = _weights_after_leaf(ta, k, shift)
    sign = -1 if (_tree_weight(tb, shift) % 2 and after % 2) else 1
    tb2 = _relabel_leaves(tb, lambda i: i + k)

    def repl(t):
        if t[0] == "L":
            if t[1] == k:
                return tb2
            return ("L", t[1] if t[1] < k else t[1] + s - 1)
        return ("N", t[1], tuple(repl(c) for c in t[2]))

    return repl(ta), sign


def _weights_after_leaf(t, k, shift, state=None):
    """Sum of shifted vertex degrees visited strictly after leaf k."""
    if state is None:
        state = [False, 0]  # seen leaf k, accumulated weight
        _weights_after_leaf(t, k, shift, state)
        return state[1]
    if t[0] == "L":
        if t[1] == k:
            state[0] = True
        return state
    if state[0]:
        state[1] += t[1][0] + shift
    for c in t[2]:
        _weights_after_leaf(c, k, shift, state)
    return state


def _weights_before_vertex(t, path, shift):
    """Sum of shifted degrees of vertices strictly before the vertex at
    `path` (a tuple of child indices) in depth-first order."""
    total = 0
    node = t
    for step in path:
        total += node[1][0] + shift
        for c in node[2][:step]:
            total += _tree_weight(c, shift)
        node = node[2][step]
    return total


def _subtree_at(t, path):
    for step in path:
        t = t[2][step]
    return t


def _replace_at(t, path, new):
    if not path:
        return new
    kids = list(t[2])
    kids[path[0]] = _replace_at(kids[path[0]], path[1:], new)
    return ("N", t[1], tuple(kids))


def _vertex_paths(t, path=()):
    if t[0] == "L":
        return
    yield path
    for i, c in enumerate(t[2]):
        yield from _vertex_paths(c, path + (i,))


# ---------------------------------------------------------------------------
# structure-constant packages


def _index_map(c: GComplex):
    return {d: {lab: i for i, lab in enumerate(c.basis[d])} for d in c.degree_range()}


def _block_inclusion(tau, k, n):
    """tau in Sym(s) acting on the points k..k+s-1 of n points."""
    s = len(tau)
    out = list(range(n))
    for t in range(s):
        out[k + t] = k + tau[t]
    return tuple(out)


def _inflation(sigma, k, s):
    """Blow point k of Sym(r) up into a block of s points."""
    r = len(sigma)
    m = sigma[k]
    out = [0] * (r + s - 1)
    for j in range(r):
        if j == k:
            continue
        src = j if j < k else j + s - 1
        img = sigma[j]
        out[src] = img if img < m else img + s - 1
    for t in range(s):
        out[k + t] = m + t
    return tuple(out)


class DgOperad:
    """An operad presented by partial compositions on a SymSeq carrier.

    compose_fn(r, k, s, d1, lab1, d2, lab2) -> dict {label: int coeff} in
    degree d1+d2 of arity r+s-1, or raises Overflow when the target falls
    outside the carrier.  Slots k are 0-indexed.
    """

    def __init__(self, carrier: SymSeq, unit, compose_fn, name="operad",
                 augmentation=None):
        self.carrier = carrier
        self.ring = carrier.ring
        self.unit = unit  # (degree, label), degree 0
        self._fn = compose_fn
        self.name = name
        self.augmentation = augmentation
        self._cache = {}

    def compose_basis(self, r, k, s, d1, lab1, d2, lab2):
        key = (r, k, s, d1, lab1, d2, lab2)
        got = self._cache.get(key)
        if got is None:
            got = self._fn(r, k, s, d1, lab1, d2, lab2)
            self._cache[key] = got
        return got

    def compose_elem(self, r, k, s, d1, e1, d2, e2):
        """Bilinear extension on {label: coeff} dicts."""
        ring = self.ring
        out = {}
        for lab1, c1 in e1.items():
            for lab2, c2 in e2.items():
                for lab, v in self.compose_basis(r, k, s, d1, lab1, d2, lab2).items():
                    c = ring.mul(ring.mul(c1, c2), ring.from_int(v))
                    c = ring.add(out.get(lab, ring.zero()), c)
                    if ring.is_zero(c):
                        out.pop(lab, None)
                    else:
                        out[lab] = c
        return out

    def is_reduced(self):
        c0 = self.carrier.component(0)
        c1 = self.carrier.component(1)
        if c0 is not None:
            return False
        if c1 is None:
            return False
        return [c1.rank(d) for d in c1.degree_range()] == [1] and c1.rank(0) == 1

    def structure_constants(self, r_max=None, window=None):
        """Nested dict of all compositions in range; scalars as strings."""
        if r_max is None:
            r_max = self.carrier.r_max
        out = {}
        for r in self.carrier.arities():
            for s in self.carrier.arities():
                if r + s - 1 > r_max:
                    continue
                cr, cs = self.carrier.component(r), self.carrier.component(s)
                for k in range(r):
                    for d1 in cr.degree_range():
                        for d2 in cs.degree_range():
                            if window and not (window[0] <= d1 + d2 <= window[1]):
                                continue
                            for l1 in cr.basis[d1]:
                                for l2 in cs.basis[d2]:
                                    try:
                                        got = self.compose_basis(r, k, s, d1, l1, d2, l2)
                                    except Overflow:
                                        continue
                                    if got:
                                        key = f"{r}|{k}|{s}|{d1}|{l1}|{d2}|{l2}"
                                        out[key] = {str(lab): str(v)
                                                    for lab, v in got.items()}
        return out


class DgCooperad:
    """A cooperad presented by partial cocompositions.

    cocompose_fn(n, k, s, d, lab) -> dict {((d1, lab1), (d2, lab2)): coeff}
    landing in arity (n-s+1, s); the extracted slot is the input interval
    [k, k+s).
    """

    def __init__(self, carrier: SymSeq, counit, cocompose_fn, name="cooperad"):
        self.carrier = carrier
        self.ring = carrier.ring
        self.counit = counit  # (degree, label) of carrier(1)
        self._fn = cocompose_fn
        self.name = name
        self._cache = {}

    def cocompose_basis(self, n, k, s, d, lab):
        key = (n, k, s, d, lab)
        got = self._cache.get(key)
        if got is None:
            got = self._fn(n, k, s, d, lab)
            self._cache[key] = got
        return got

    def cocompose_elem(self, n, k, s, d, e):
        ring = self.ring
        out = {}
        for lab, c in e.items():
            for pair, v in self.cocompose_basis(n, k, s, d, lab).items():
                w = ring.mul(c, ring.from_int(v) if isinstance(v, int) else v)
                w = ring.add(out.get(pair, ring.zero()), w)
                if ring.is_zero(w):
                    out.pop(pair, None)
                else:
                    out[pair] = w
        return out

    def is_coreduced(self):
        c0 = self.carrier.component(0)
        c1 = self.carrier.component(1)
        if c0 is not None or c1 is None:
            return False
        return [c1.rank(d) for d in c1.degree_range()] == [1] and c1.rank(0) == 1


# ---------------------------------------------------------------------------
# axiom checkers


class AxiomReport:
    """Counts of checked axiom instances plus any counterexamples."""

    def __init__(self, subject):
        self.subject = subject
        self.checked = {}
        self.skipped = {}
        self.failures = []

    def count(self, axiom, ok, witness=None):
        self.checked[axiom] = self.checked.get(axiom, 0) + 1
        if not ok:
            self.failures.append((axiom, witness))

    def skip(self, axiom):
        self.skipped[axiom] = self.skipped.get(axiom, 0) + 1

    @property
    def passed(self):
        return not self.failures

    def summary(self):
        lines = [f"{self.subject}: {'PASS' if self.passed else 'FAIL'}"]
        for ax in sorted(self.checked):
            n = self.checked[ax]
            sk = self.skipped.get(ax, 0)
            extra = f" (+{sk} out of window)" if sk else ""
            lines.append(f"  {ax}: {n} instances{extra}")
        for ax, w in self.failures[:10]:
            lines.append(f"  counterexample [{ax}]: {w}")
        return "\n".join(lines)

    def __repr__(self):
        return f"AxiomReport({self.subject}, passed={self.passed})"


def _elem_of(ring, lab):
    return {lab: ring.one()}


def _act_elem(c: GComplex, g, d, e):
    ring = c.ring
    perm, signs = c.full_action(g, d)
    idx = {lab: i for i, lab in enumerate(c.basis[d])}
    out = {}
    for lab, v in e.items():
        i = idx[lab]
        w = ring.mul(ring.from_int(signs[i]), v)
        lab2 = c.basis[d][perm[i]]
        out[lab2] = ring.add(out.get(lab2, ring.zero()), w)
    return {k: v for k, v in out.items() if not ring.is_zero(v)}


def _diff_elem(c: GComplex, d, e):
    ring = c.ring
    m = c.diff.get(d)
    if m is None:
        return {}
    idx = {lab: i for i, lab in enumerate(c.basis[d])}
    vec = {}
    for lab, v in e.items():
        j = idx[lab]
        for (i, jj), w in m.entries.items():
            if jj == j:
                acc = ring.add(vec.get(i, ring.zero()), ring.mul(w, v))
                vec[i] = acc
    return {c.basis[d - 1][i]: v for i, v in vec.items() if not ring.is_zero(v)}


def _scale(ring, e, c):
    return {k: ring.mul(v, c) for k, v in e.items()}


def _elem_add(ring, a, b):
    out = dict(a)
    for k, v in b.items():
        w = ring.add(out.get(k, ring.zero()), v)
        if ring.is_zero(w):
            out.pop(k, None)
        else:
            out[k] = w
    return out


def _elem_eq(ring, a, b):
    return _elem_add(ring, a, _scale(ring, b, ring.from_int(-1))) == {}


def check_operad(p: DgOperad, r_max=None, d_window=None) -> AxiomReport:
    """Exhaustive axiom check within the window.

    Instances whose output would leave the carrier are counted as skipped,
    not failed; truncated carriers cannot certify them either way.
    """
    carrier = p.carrier
    ring = p.ring
    if r_max is None:
        r_max = carrier.r_max
    if d_window is None:
        d_window = carrier.window
    rep = AxiomReport(p.name)
    arities = [r for r in carrier.arities() if r <= r_max]

    def basis_items(r):
        c = carrier.component(r)
        for d in c.degree_range():
            if d_window[0] <= d <= d_window[1]:
                for lab in c.basis[d]:
                    yield d, lab

    def comp(r, k, s, d1, l1, d2, l2):
        return p.compose_basis(r, k, s, d1, l1, d2, l2)

    du, lu = p.unit
    # unit laws
    for r in arities:
        c = carrier.component(r)
        for d, lab in basis_items(r):
            try:
                got = comp(1, 0, r, du, lu, d, lab)
                rep.count("left_unit", got == {lab: 1}, (r, d, lab, got))
            except Overflow:
                rep.skip("left_unit")
            for k in range(r):
                try:
                    got = comp(r, k, 1, d, lab, du, lu)
                    rep.count("right_unit", got == {lab: 1}, (r, k, d, lab, got))
                except Overflow:
                    rep.skip("right_unit")

    def as_ring(e):
        return {lab: ring.from_int(v) for lab, v in e.items()}

    # equivariance against both tensor factors
    for r in arities:
        for s in arities:
            n = r + s - 1
            if n > r_max or carrier.component(n) is None:
                continue
            cr, cs, cn = (carrier.component(t) for t in (r, s, n))
            for (d1, l1), (d2, l2) in itertools.product(basis_items(r), basis_items(s)):
                if not (d_window[0] <= d1 + d2 <= d_window[1]):
                    continue
                for k in range(r):
                    # (sig.x) o_{sig[k]} y agrees with the inflated action
                    # on x o_k y: slot k travels along with the relabeling
                    for sig in _sym(r).generators:
                        try:
                            lhs = {}
                            for la, va in _act_elem(cr, sig, d1,
                                                    _elem_of(ring, l1)).items():
                                lhs = _elem_add(ring, lhs, _scale(
                                    ring, as_ring(comp(r, sig[k], s, d1, la, d2, l2)), va))
                            rho = _inflation(sig, k, s)
                            rhs = _act_elem(
                                cn, rho, d1 + d2,
                                as_ring(comp(r, k, s, d1, l1, d2, l2)))
                        except Overflow:
                            rep.skip("equivariance_outer")
                            continue
                        rep.count("equivariance_outer", _elem_eq(ring, lhs, rhs),
                                  (r, k, s, sig, d1, l1, d2, l2))
                    for tau in _sym(s).generators:
                        try:
                            base = as_ring(comp(r, k, s, d1, l1, d2, l2))
                            lhs = {}
                            for lb, vb in _act_elem(cs, tau, d2,
                                                    _elem_of(ring, l2)).items():
                                lhs = _elem_add(ring, lhs, _scale(
                                    ring, as_ring(comp(r, k, s, d1, l1, d2, lb)), vb))
                            rhs = _act_elem(cn, _block_inclusion(tau, k, n),
                                            d1 + d2, base)
                        except Overflow:
                            rep.skip("equivariance_inner")
                            continue
                        rep.count("equivariance_inner", _elem_eq(ring, lhs, rhs),
                                  (r, k, s, tau, d1, l1, d2, l2))

    # associativity, nested and disjoint
    for r in arities:
        for s in arities:
            for t in arities:
                n = r + s + t - 2
                if n > r_max or carrier.component(n) is None:
                    continue
                if carrier.component(r + s - 1) is None or \
                        carrier.component(r + t - 1) is None:
                    continue
                triples = itertools.product(basis_items(r), basis_items(s),
                                            basis_items(t))
                for (d1, l1), (d2, l2), (d3, l3) in triples:
                    if not (d_window[0] <= d1 + d2 + d3 <= d_window[1]):
                        continue
                    e1, e2, e3 = ({l1: ring.one()}, {l2: ring.one()},
                                  {l3: ring.one()})
                    # nested: c into slot j of b, b into slot k of a
                    for k in range(r):
                        for j in range(s):
                            try:
                                ab = as_ring(comp(r, k, s, d1, l1, d2, l2))
                                lhs = {}
                                for lab, v in ab.items():
                                    lhs = _elem_add(ring, lhs, _scale(
                                        ring,
                                        as_ring(comp(r + s - 1, k + j, t,
                                                     d1 + d2, lab, d3, l3)), v))
                                bc = as_ring(comp(s, j, t, d2, l2, d3, l3))
                                rhs = {}
                                for lab, v in bc.items():
                                    rhs = _elem_add(ring, rhs, _scale(
                                        ring,
                                        as_ring(comp(r, k, s + t - 1, d1, l1,
                                                     d2 + d3, lab)), v))
                            except Overflow:
                                rep.skip("sequential")
                                continue
                            rep.count("sequential", _elem_eq(ring, lhs, rhs),
                                      (r, s, t, k, j, d1, l1, d2, l2, d3, l3))
                    # disjoint slots i < j of a
                    for i in range(r):
                        for j in range(i + 1, r):
                            try:
                                ab = as_ring(comp(r, i, s, d1, l1, d2, l2))
                                lhs = {}
                                for lab, v in ab.items():
                                    lhs = _elem_add(ring, lhs, _scale(
                                        ring,
                                        as_ring(comp(r + s - 1, j + s - 1, t,
                                                     d1 + d2, lab, d3, l3)), v))
                                ac = as_ring(comp(r, j, t, d1, l1, d3, l3))
                                rhs = {}
                                for lab, v in ac.items():
                                    rhs = _elem_add(ring, rhs, _scale(
                                        ring,
                                        as_ring(comp(r + t - 1, i, s, d1 + d3,
                                                     lab, d2, l2)), v))
                                if (d2 % 2) and (d3 % 2):
                                    rhs = _scale(ring, rhs, ring.from_int(-1))
                            except Overflow:
                                rep.skip("parallel")
                                continue
                            rep.count("parallel", _elem_eq(ring, lhs, rhs),
                                      (r, s, t, i, j, d1, l1, d2, l2, d3, l3))

    # Leibniz rule; on truncated carriers the boundary degrees cannot be
    # certified either way, so those instances count as skipped
    truncated = carrier.truncated
    for r in arities:
        for s in arities:
            n = r + s - 1
            if n > r_max or carrier.component(n) is None:
                continue
            cr, cs, cn = (carrier.component(t) for t in (r, s, n))
            for (d1, l1), (d2, l2) in itertools.product(basis_items(r), basis_items(s)):
                dd = d1 + d2
                if not (d_window[0] <= dd <= d_window[1]):
                    continue
                for k in range(r):
                    if truncated and (d1 - 1 < cr.d_min or d2 - 1 < cs.d_min
                                      or dd - 1 < cn.d_min):
                        rep.skip("leibniz")
                        continue
                    try:
                        ab = as_ring(comp(r, k, s, d1, l1, d2, l2))
                        lhs = _diff_elem(cn, dd, ab)
                        rhs = {}
                        for la, va in _diff_elem(cr, d1, {l1: ring.one()}).items():
                            rhs = _elem_add(ring, rhs, _scale(
                                ring, as_ring(comp(r, k, s, d1 - 1, la, d2, l2)), va))
                        sgn = ring.from_int(-1 if d1 % 2 else 1)
                        for lb, vb in _diff_elem(cs, d2, {l2: ring.one()}).items():
                            rhs = _elem_add(ring, rhs, _scale(
                                ring, as_ring(comp(r, k, s, d1, l1, d2 - 1, lb)),
                                ring.mul(sgn, vb)))
                    except Overflow:
                        rep.skip("leibniz")
                        continue
                    rep.count("leibniz", _elem_eq(ring, lhs, rhs),
                              (r, k, s, d1, l1, d2, l2))
    return rep


def check_cooperad(c: DgCooperad, r_max=None, d_window=None) -> AxiomReport:
    """Dual axioms, checked directly on the cocompositions (linear in the
    basis, no dualization detour)."""
    carrier = c.carrier
    ring = c.ring
    if r_max is None:
        r_max = carrier.r_max
    if d_window is None:
        d_window = carrier.window
    rep = AxiomReport(c.name)
    arities = [n for n in carrier.arities() if n <= r_max]
    duc, luc = c.counit

    def basis_items(n):
        comp = carrier.component(n)
        for d in comp.degree_range():
            if d_window[0] <= d <= d_window[1]:
                for lab in comp.basis[d]:
                    yield d, lab

    def delta(n, k, s, d, lab):
        return {pair: (ring.from_int(v) if isinstance(v, int) else v)
                for pair, v in c.cocompose_basis(n, k, s, d, lab).items()}

    def pairs_eq(a, b):
        keys = set(a) | set(b)
        for key in keys:
            va = a.get(key, ring.zero())
            vb = b.get(key, ring.zero())
            if not ring.is_zero(ring.add(va, ring.mul(vb, ring.from_int(-1)))):
                return False
        return True

    # counitality
    for n in arities:
        for d, lab in basis_items(n):
            got = delta(n, 0, n, d, lab)
            keep = {}
            for ((da, la), (db, lb)), v in got.items():
                if (da, la) == (duc, luc):
                    keep[lb] = ring.add(keep.get(lb, ring.zero()), v)
            ok = _elem_eq(ring, {k: v for k, v in keep.items() if not ring.is_zero(v)},
                          {lab: ring.one()})
            rep.count("counit_outer", ok, (n, d, lab))
            for k in range(n):
                got = delta(n, k, 1, d, lab)
                keep = {}
                for ((da, la), (db, lb)), v in got.items():
                    if (db, lb) == (duc, luc):
                        keep[la] = ring.add(keep.get(la, ring.zero()), v)
                ok = _elem_eq(ring,
                              {k2: v for k2, v in keep.items() if not ring.is_zero(v)},
                              {lab: ring.one()})
                rep.count("counit_inner", ok, (n, k, d, lab))

    # coequivariance
    for n in arities:
        cn = carrier.component(n)
        for d, lab in basis_items(n):
            for s in range(2, n):
                r = n - s + 1
                for k in range(r):
                    # dual of the slot-travelling rule: cutting the inflated
                    # action at sig[k] is cutting z at k, sig on the upper part
                    for sig in _sym(r).generators:
                        rho = _inflation(sig, k, s)
                        lhs = {}
                        for la, va in _act_elem(cn, rho, d, {lab: ring.one()}).items():
                            for pair, v in delta(n, sig[k], s, d, la).items():
                                w = ring.mul(va, v)
                                lhs[pair] = ring.add(lhs.get(pair, ring.zero()), w)
                        rhs = {}
                        cr = carrier.component(r)
                        for pair, v in delta(n, k, s, d, lab).items():
                            (da, la), right = pair
                            for la2, va in _act_elem(cr, sig, da,
                                                     {la: ring.one()}).items():
                                key = ((da, la2), right)
                                w = ring.mul(v, va)
                                rhs[key] = ring.add(rhs.get(key, ring.zero()), w)
                        rep.count("coequivariance_outer", pairs_eq(lhs, rhs),
                                  (n, k, s, sig, d, lab))
                    for tau in _sym(s).generators:
                        inc = _block_inclusion(tau, k, n)
                        lhs = {}
                        for la, va in _act_elem(cn, inc, d, {lab: ring.one()}).items():
                            for pair, v in delta(n, k, s, d, la).items():
                                w = ring.mul(va, v)
                                lhs[pair] = ring.add(lhs.get(pair, ring.zero()), w)
                        rhs = {}
                        csc = carrier.component(s)
                        for pair, v in delta(n, k, s, d, lab).items():
                            left, (db, lb) = pair
                            for lb2, vb in _act_elem(csc, tau, db,
                                                     {lb: ring.one()}).items():
                                key = (left, (db, lb2))
                                w = ring.mul(v, vb)
                                rhs[key] = ring.add(rhs.get(key, ring.zero()), w)
                        rep.count("coequivariance_inner", pairs_eq(lhs, rhs),
                                  (n, k, s, tau, d, lab))

    # coassociativity, nested and disjoint
    for n in arities:
        for d, lab in basis_items(n):
            for r in arities:
                for s in arities:
                    for t in arities:
                        if r + s + t - 2 != n:
                            continue
                        for k in range(r):
                            for j in range(s):
                                # nested: extract [k, k+s+t-1) then [j, j+t) inside
                                lhs = {}
                                for ((da, la), (dy, ly)), v in delta(
                                        n, k, s + t - 1, d, lab).items():
                                    for ((db, lb), (dc, lc)), w in delta(
                                            s + t - 1, j, t, dy, ly).items():
                                        key = ((da, la), (db, lb), (dc, lc))
                                        u = ring.mul(v, w)
                                        lhs[key] = ring.add(lhs.get(key, ring.zero()), u)
                                rhs = {}
                                for ((dz, lz), (dc, lc)), v in delta(
                                        n, k + j, t, d, lab).items():
                                    for ((da, la), (db, lb)), w in delta(
                                            r + s - 1, k, s, dz, lz).items():
                                        key = ((da, la), (db, lb), (dc, lc))
                                        u = ring.mul(v, w)
                                        rhs[key] = ring.add(rhs.get(key, ring.zero()), u)
                                rep.count("cosequential", pairs_eq(lhs, rhs),
                                          (n, r, s, t, k, j, d, lab))
                        for i in range(r):
                            for j in range(i + 1, r):
                                # b at final inputs [i, i+s), c at [j+s-1, ...)
                                lhs = {}
                                for ((dy, ly), (dc, lc)), v in delta(
                                        n, j + s - 1, t, d, lab).items():
                                    for ((da, la), (db, lb)), w in delta(
                                            r + s - 1, i, s, dy, ly).items():
                                        key = ((da, la), (db, lb), (dc, lc))
                                        u = ring.mul(v, w)
                                        lhs[key] = ring.add(lhs.get(key, ring.zero()), u)
                                rhs = {}
                                for ((dz, lz), (db, lb)), v in delta(
                                        n, i, s, d, lab).items():
                                    for ((da, la), (dc, lc)), w in delta(
                                            r + t - 1, j, t, dz, lz).items():
                                        sgn = -1 if (db % 2 and dc % 2) else 1
                                        key = ((da, la), (db, lb), (dc, lc))
                                        u = ring.mul(ring.mul(v, w), ring.from_int(sgn))
                                        rhs[key] = ring.add(rhs.get(key, ring.zero()), u)
                                rep.count("coparallel", pairs_eq(lhs, rhs),
                                          (n, r, s, t, i, j, d, lab))

    # co-Leibniz; boundary degrees of truncated carriers are skipped
    truncated = carrier.truncated
    for n in arities:
        cn = carrier.component(n)
        for d, lab in basis_items(n):
            dx = _diff_elem(cn, d, {lab: ring.one()})
            for s in range(2, n + 1):
                r = n - s + 1
                cr, cs = carrier.component(r), carrier.component(s)
                if cr is None or cs is None:
                    continue
                for k in range(r):
                    terms = delta(n, k, s, d, lab)
                    if truncated and (d - 1 < cn.d_min or any(
                            da - 1 < cr.d_min or db - 1 < cs.d_min
                            for ((da, _), (db, _)) in terms)):
                        rep.skip("coleibniz")
                        continue
                    lhs = {}
                    for la, va in dx.items():
                        for pair, v in delta(n, k, s, d - 1, la).items():
                            w = ring.mul(va, v)
                            lhs[pair] = ring.add(lhs.get(pair, ring.zero()), w)
                    rhs = {}
                    for ((da, la), (db, lb)), v in terms.items():
                        for la2, va in _diff_elem(cr, da, {la: ring.one()}).items():
                            key = ((da - 1, la2), (db, lb))
                            w = ring.mul(v, va)
                            rhs[key] = ring.add(rhs.get(key, ring.zero()), w)
                        sgn = ring.from_int(-1 if da % 2 else 1)
                        for lb2, vb in _diff_elem(cs, db, {lb: ring.one()}).items():
                            key = ((da, la), (db - 1, lb2))
                            w = ring.mul(v, ring.mul(sgn, vb))
                            rhs[key] = ring.add(rhs.get(key, ring.zero()), w)
                    rep.count("coleibniz", pairs_eq(lhs, rhs), (n, k, s, d, lab))
    return rep


# ---------------------------------------------------------------------------
# standard small (co)operads


def com_operad(ring: Ring, r_max: int) -> DgOperad:
    """Nonunital commutative operad: R in every arity with trivial action."""
    carrier = SymSeq.constant(ring, r_max)

    def fn(r, k, s, d1, l1, d2, l2):
        if r + s - 1 > r_max:
            raise Overflow("arity beyond carrier")
        return {"c": 1}

    return DgOperad(carrier, (0, "c"), fn, name="Com")


def cocom_cooperad(ring: Ring, r_max: int) -> DgCooperad:
    """Cocommutative cooperad, the arity-wise dual of Com."""
    carrier = SymSeq.constant(ring, r_max)

    def fn(n, k, s, d, lab):
        if n - s + 1 < 1 or s < 1:
            return {}
        return {((0, "c"), (0, "c")): 1}

    return DgCooperad(carrier, (0, "c"), fn, name="coCom")


# ---------------------------------------------------------------------------
# the free operad


def _tree_complexes(x: SymSeq, r_max, depth, min_vertex_arity, shift,
                    window=None, extra_diff=None):
    """GComplex per arity whose basis is canonical trees.

    depth None means n-1 levels at arity n, enough for any reduced tree.
    The differential is the internal one plus an optional extra term
    (tree -> {tree: coeff}, one degree down); construction validates, so
    every caller gets d^2 = 0 certified for free.
    """
    ring = x.ring
    xidx = {k: _index_map(x.component(k)) for k in x.arities()}
    comps = {}
    for n in range(1, r_max + 1):
        cap = depth if depth is not None else max(n - 1, 1)
        trees = _enum_trees(tuple(range(n)), x, cap, min_vertex_arity)
        by_deg = {}
        for t in trees:
            dt = _tree_degree(t, shift)
            if window and not (window[0] <= dt <= window[1]):
                continue
            by_deg.setdefault(dt, []).append(t)
        if not by_deg:
            continue
        for d in by_deg:
            by_deg[d].sort(key=repr)
        lo, hi = min(by_deg), max(by_deg)
        idx = {d: {t: i for i, t in enumerate(ts)} for d, ts in by_deg.items()}
        diff = {}
        for d in range(lo + 1, hi + 1):
            entries = {}
            for j, t in enumerate(by_deg.get(d, [])):
                img = _internal_diff(t, x, shift, ring)
                if extra_diff is not None:
                    img = _elem_add(ring, img, extra_diff(t, d))
                for t2, v in img.items():
                    i = idx.get(d - 1, {}).get(t2)
                    if i is None:
                        raise Overflow(f"differential image left the basis at {t2!r}")
                    entries[(i, j)] = ring.add(entries.get((i, j), ring.zero()), v)
            diff[d] = SparseMatrix(ring, len(by_deg.get(d - 1, [])),
                                   len(by_deg.get(d, [])),
                                   {k: v for k, v in entries.items()
                                    if not ring.is_zero(v)})
        action = {}
        for g in _sym(n).generators:
            per = {}
            for d in range(lo, hi + 1):
                ts = by_deg.get(d, [])
                perm, signs = [0] * len(ts), [1] * len(ts)
                for i, t in enumerate(ts):
                    t2, sgn = _act_tree(t, g, x, shift, xidx)
                    perm[i] = idx[d][t2]
                    signs[i] = sgn
                per[d] = (perm, signs)
            action[g] = per
        comps[n] = GComplex(ring, _sym(n), (lo, hi),
                            {d: list(ts) for d, ts in by_deg.items()},
                            diff, action)
    return comps


def _internal_diff(t, x: SymSeq, shift, ring):
    """d applied to each vertex label in place, with Koszul prefix over the
    shifted degrees of the earlier vertices.  Suspended factors flip the
    sign of their differential."""
    out = {}
    eps = -1 if shift % 2 else 1
    for path in _vertex_paths(t):
        node = _subtree_at(t, path)
        d, lab = node[1]
        comp = x.component(len(node[2]))
        img = _diff_elem(comp, d, {lab: comp.ring.one()})
        if not img:
            continue
        pre = _weights_before_vertex(t, path, shift)
        sgn = ring.from_int(eps * (-1 if pre % 2 else 1))
        for lab2, v in img.items():
            t2 = _replace_at(t, path, ("N", (d - 1, lab2), node[2]))
            w = ring.mul(sgn, v)
            out[t2] = ring.add(out.get(t2, ring.zero()), w)
    return {k: v for k, v in out.items() if not ring.is_zero(v)}


def _tree_depth(t):
    if t[0] == "L":
        return 0
    return 1 + max(_tree_depth(c) for c in t[2])


def free_operad(x: SymSeq, n_iter: int, r_max: int | None = None) -> DgOperad:
    """Free operad on x: canonical trees up to n_iter levels of nesting.

    The depth filtration is exposed as .tower, a list of SymSeqs (depth 0
    is the bare unit).  Composition is grafting; it raises Overflow when
    the result leaves the enumerated carrier.  Arity-0 generators are out
    of scope here.
    """
    if x.component(0) is not None:
        raise ValueError("free operad needs x(0) = 0")
    ring = x.ring
    if r_max is None:
        arities = x.arities()
        r_max = min(max(arities) ** n_iter, 6) if arities else 1
    comps = _tree_complexes(x, r_max, n_iter, 1, 0)
    comps.setdefault(1, GComplex(ring, _sym(1), (0, 0), {0: [("L", 0)]}, {}))
    carrier = SymSeq(ring, comps)
    index = {n: _index_map(c) for n, c in carrier.components.items()}

    def fn(r, k, s, d1, t1, d2, t2):
        if r + s - 1 > r_max:
            raise Overflow("arity beyond carrier")
        t, sgn = _graft(t1, k, t2, 0)
        comp = carrier.component(r + s - 1)
        if comp is None or t not in index[r + s - 1].get(d1 + d2, {}):
            raise Overflow("tree deeper than the carrier")
        return {t: sgn}

    p = DgOperad(carrier, (0, ("L", 0)), fn, name="free")
    p.tower = [_depth_slice(carrier, m) for m in range(n_iter + 1)]
    return p


def _depth_slice(carrier: SymSeq, m: int) -> SymSeq:
    """Subsequence of a tree carrier spanned by trees of depth <= m."""
    sub = {}
    for n, c in carrier.components.items():
        kidx = {d: [i for i, t in enumerate(c.basis[d]) if _tree_depth(t) <= m]
                for d in c.degree_range()}
        if not any(kidx.values()):
            continue
        keep = {d: [c.basis[d][i] for i in kidx[d]] for d in c.degree_range()}
        diff = {}
        for d in range(c.d_min + 1, c.d_max + 1):
            rows = {i: a for a, i in enumerate(kidx[d - 1])}
            cols = {j: b for b, j in enumerate(kidx[d])}
            entries = {}
            for (i, j), v in c.diff[d].entries.items():
                if i in rows and j in cols:
                    entries[(rows[i], cols[j])] = v
            diff[d] = SparseMatrix(c.ring, len(kidx[d - 1]), len(kidx[d]), entries)
        action = {}
        for g, per in c.action.items():
            newper = {}
            for d in c.degree_range():
                pos = {i: a for a, i in enumerate(kidx[d])}
                perm, signs = per[d]
                newper[d] = ([pos[perm[i]] for i in kidx[d]],
                             [signs[i] for i in kidx[d]])
            action[g] = newper
        sub[n] = GComplex(c.ring, c.group, (c.d_min, c.d_max), keep, diff, action)
    return SymSeq(carrier.ring, sub)


# ---------------------------------------------------------------------------
# bar construction


def _reduced_part(x: SymSeq) -> SymSeq:
    comps = {r: c for r, c in x.components.items() if r >= 2}
    return SymSeq(x.ring, comps, r_max=x.r_max, truncated=x.truncated)


def _cut_subtrees(t, shift):
    """All single degraftings of a canonical tree: (k, s, upper, lower,
    lower_degree, sign), the lower piece spanning the input interval
    [k, k+s).  Leaf cuts contribute the unit tree below; the root cut
    puts it above.  The sign moves the cut block past the factors that
    follow it in depth-first order."""
    n = _arity(t)
    total = _tree_weight(t, shift)
    out = [(k, 1, t, ("L", 0), 0, 1) for k in range(n)]
    for path in _vertex_paths(t):
        sub = _subtree_at(t, path)
        ls = _leaves(sub)
        s = len(ls)
        k = min(ls)
        if set(ls) != set(range(k, k + s)):
            continue
        w = _tree_weight(sub, shift)
        after = total - _weights_before_vertex(t, path, shift) - w
        sgn = -1 if (w % 2 and after % 2) else 1
        upper = _relabel_leaves(_replace_at(t, path, ("L", k)),
                                lambda j: j if j <= k else j - s + 1)
        lower = _relabel_leaves(sub, lambda j: j - k)
        out.append((k, s, upper, lower, w, sgn))
    return out


def bar(p: DgOperad, r_max=None, window=None) -> DgCooperad:
    """Bar cooperad of a reduced dg-operad: reduced canonical trees with
    suspended vertex labels, differential = internal labels + edge
    contraction, cocomposition by degrafting along input intervals.

    A degree window keeps only trees inside it and flags the carrier
    truncated.  Component construction revalidates, so d^2 = 0 and
    equivariance are certified on everything built here.
    """
    if not p.is_reduced():
        raise NotReduced("bar needs p(0) = 0 and p(1) = R on the unit")
    ring = p.ring
    if r_max is None:
        r_max = p.carrier.r_max
    x = _reduced_part(p.carrier)
    xidx = {k: _index_map(x.component(k)) for k in x.arities()}

    def contraction(t, d):
        out = {}
        for path in _vertex_paths(t):
            node = _subtree_at(t, path)
            dv, lv = node[1]
            pre = _weights_before_vertex(t, path, 1)
            between = 0
            for j, child in enumerate(node[2]):
                if child[0] == "N":
                    dw, lw = child[1]
                    sgn = 1
                    if (pre + dv + 1) % 2:
                        sgn = -sgn
                    if (dw + 1) % 2 and between % 2:
                        sgn = -sgn
                    got = p.compose_basis(len(node[2]), j, len(child[2]),
                                          dv, lv, dw, lw)
                    kids = node[2][:j] + child[2] + node[2][j + 1:]
                    for lab, co in got.items():
                        t2 = _replace_at(t, path, ("N", (dv + dw, lab), kids))
                        t2c, s2 = _canon(t2, x, 1, xidx)
                        v = ring.from_int(sgn * s2 * co)
                        out[t2c] = ring.add(out.get(t2c, ring.zero()), v)
                between += _tree_weight(child, 1)
        return {t2: v for t2, v in out.items() if not ring.is_zero(v)}

    comps = _tree_complexes(x, r_max, None, 2, 1, window=window,
                            extra_diff=contraction)
    carrier = SymSeq(ring, comps, r_max=r_max,
                     truncated=(window is not None) or p.carrier.truncated)

    def fn(n, k, s, d, t):
        out = {}
        for kk, ss, up, low, w, sgn in _cut_subtrees(t, 1):
            if kk == k and ss == s:
                pair = ((d - w, up), (w, low))
                out[pair] = out.get(pair, 0) + sgn
        return out

    b = DgCooperad(carrier, (0, ("L", 0)), fn, name=f"bar({p.name})")
    b.operad = p
    return b


# ---------------------------------------------------------------------------
# cobar construction


def cobar(c: DgCooperad, r_max=None, window=None) -> DgOperad:
    """Cobar operad of a coreduced dg-cooperad: reduced canonical trees
    with desuspended labels, differential = internal labels + one-vertex
    expansion along proper cocompositions, composition by grafting."""
    if not c.is_coreduced():
        raise NotCoreduced("cobar needs c(0) = 0 and c(1) = R on the counit")
    ring = c.ring
    if r_max is None:
        r_max = c.carrier.r_max
    x = _reduced_part(c.carrier)
    xidx = {r: _index_map(cc) for r, cc in x.components.items()}

    def expansion(t, d):
        # split a subset A of a vertex's children onto a new inner vertex.
        # Non-interval subsets take their coefficients from the interval
        # cocomposition of the label acted on by the gathering permutation;
        # the child blocks that change places pay a Koszul shuffle.
        out = {}
        for path in _vertex_paths(t):
            node = _subtree_at(t, path)
            dz, lz = node[1]
            m = len(node[2])
            cm = x.component(m)
            pre = _weights_before_vertex(t, path, -1)
            wts = [_tree_weight(ch, -1) for ch in node[2]]
            for s in range(2, m):
                for A in itertools.combinations(range(m), s):
                    a0 = A[0]
                    aset = set(A)
                    rest = [j for j in range(a0 + 1, m) if j not in aset]
                    g = list(range(m))
                    for i, a in enumerate(A):
                        g[a] = a0 + i
                    for i, j in enumerate(rest):
                        g[j] = a0 + s + i
                    perm, signs = cm.full_action(tuple(g), dz)
                    i0 = xidx[m][dz][lz]
                    w, eta = cm.basis[dz][perm[i0]], signs[i0]
                    shuffle = [0] * (m - a0)
                    for i, a in enumerate(A):
                        shuffle[a - a0] = i
                    for i, j in enumerate(rest):
                        shuffle[j - a0] = s + i
                    eta *= koszul_reorder_sign(wts[a0:], shuffle)
                    before = sum(wts[:a0])
                    for ((da, la), (db, lb)), co in \
                            c.cocompose_basis(m, a0, s, dz, w).items():
                        sgn = eta
                        if (pre + da) % 2:
                            sgn = -sgn
                        if (db - 1) % 2 and before % 2:
                            sgn = -sgn
                        inner = ("N", (db, lb),
                                 tuple(node[2][a] for a in A))
                        kids = (node[2][:a0] + (inner,)
                                + tuple(node[2][j] for j in rest))
                        t2 = _replace_at(t, path, ("N", (da, la), kids))
                        cv = ring.from_int(co) if isinstance(co, int) else co
                        v = ring.mul(ring.from_int(sgn), cv)
                        out[t2] = ring.add(out.get(t2, ring.zero()), v)
        return {t2: v for t2, v in out.items() if not ring.is_zero(v)}

    comps = _tree_complexes(x, r_max, None, 2, -1, window=window,
                            extra_diff=expansion)
    carrier = SymSeq(ring, comps, r_max=r_max,
                     truncated=(window is not None) or c.carrier.truncated)
    index = {n: _index_map(cc) for n, cc in carrier.components.items()}

    def fn(r, k, s, d1, t1, d2, t2):
        if r + s - 1 > r_max:
            raise Overflow("arity beyond carrier")
        t, sgn = _graft(t1, k, t2, -1)
        if t not in index.get(r + s - 1, {}).get(d1 + d2, {}):
            raise Overflow("composite outside the carrier window")
        return {t: sgn}

    q = DgOperad(carrier, (0, ("L", 0)), fn, name=f"cobar({c.name})")
    q.cooperad = c
    return q


# ---------------------------------------------------------------------------
# linear duality and the Koszul dual


def dual_symseq(x: SymSeq) -> SymSeq:
    """Degreewise linear dual: the same labels in negated degrees,
    transposed differentials, identical action data (signed permutation
    matrices are their own contragredients).  Double dual is the identity
    on labels."""
    comps = {}
    for r, c in x.components.items():
        basis = {-d: list(c.basis.get(d, [])) for d in c.degree_range()}
        diff = {}
        for d in range(c.d_min + 1, c.d_max + 1):
            diff[-d + 1] = c.diff[d].transpose()
        action = {g: {-d: per[d] for d in per} for g, per in c.action.items()}
        comps[r] = GComplex(x.ring, c.group, (-c.d_max, -c.d_min),
                            basis, diff, action)
    return SymSeq(x.ring, comps, r_max=x.r_max, truncated=x.truncated)


def koszul_dual(p: DgOperad, r_max=None, window=None) -> DgOperad:
    """Arity-wise dual of the bar cooperad; composition transposes
    cocomposition, so the structure-constant matrices of kd(p) are exactly
    the transposed degrafting matrices of bar(p).

    A truncated carrier (a degree-windowed build of something unbounded)
    demands an explicit window, in dual degrees; without one the answer
    would silently depend on where the input was cut off.
    """
    if p.carrier.truncated and window is None:
        raise InfiniteRankInWindow(
            "carrier truncated; pass an explicit degree window")
    bwin = None if window is None else (-window[1], -window[0])
    b = bar(p, r_max=r_max, window=bwin)
    carrier = dual_symseq(b.carrier)
    tabs = {}

    def fn(r, k, s, d1, t1, d2, t2):
        n = r + s - 1
        comp = b.carrier.component(n)
        if comp is None:
            raise Overflow("arity beyond carrier")
        bd = -(d1 + d2)
        if bd < comp.d_min or bd > comp.d_max:
            if b.carrier.truncated:
                raise Overflow("composite outside the degree window")
            return {}
        key = (n, k, s, bd)
        tab = tabs.get(key)
        if tab is None:
            tab = {}
            for lab in comp.basis.get(bd, []):
                for pair, co in b.cocompose_basis(n, k, s, bd, lab).items():
                    sub = tab.setdefault(pair, {})
                    sub[lab] = sub.get(lab, 0) + co
            tabs[key] = tab
        got = tab.get(((-d1, t1), (-d2, t2)), {})
        return {lab: co for lab, co in got.items() if co}

    kd = DgOperad(carrier, (0, ("L", 0)), fn, name=f"kd({p.name})")
    kd.bar = b
    return kd


# ---------------------------------------------------------------------------
# the Koszul complex


def _acc_entry(ring, entries, row, col, v):
    cur = entries.get((row, col))
    new = ring.add(cur, v) if cur is not None else v
    if ring.is_zero(new):
        entries.pop((row, col), None)
    else:
        entries[(row, col)] = new


def _gamma_fold(p: DgOperad, arity, deg, lab, args):
    """Plug args = ((points, (dq, lq)), ...) into consecutive slots of one
    operation, left to right.  Integer-linear; returns (degree, dict)."""
    fdeg = deg + sum(dq for _, (dq, _) in args)
    acc = {lab: 1}
    aar, slot = arity, 0
    for pts, (dq, lq) in args:
        sq = len(pts)
        new = {}
        for la, ca in acc.items():
            for lb, cb in p.compose_basis(aar, slot, sq, deg, la, dq, lq).items():
                new[lb] = new.get(lb, 0) + ca * cb
        acc = {la: v for la, v in new.items() if v}
        if not acc:
            return fdeg, {}
        deg += dq
        aar += sq - 1
        slot += sq
    return fdeg, acc


def _resort_merged(p: DgOperad, pidx, pts_lists, deg, acc):
    """Normalize a merged block: the concatenated point lists resorted and
    the labels pushed along the induced permutation of inputs."""
    concat = tuple(q for pts in pts_lists for q in pts)
    spts = tuple(sorted(concat))
    if spts == concat:
        return spts, dict(acc)
    rank = {q: i for i, q in enumerate(spts)}
    tau = tuple(rank[q] for q in concat)
    comp = p.carrier.component(len(spts))
    pa, sa = comp.full_action(tau, deg)
    idx = pidx[len(spts)][deg]
    out = {}
    for la, ca in acc.items():
        i = idx[la]
        lb = comp.basis[deg][pa[i]]
        out[lb] = out.get(lb, 0) + ca * sa[i]
    return spts, out


def _twist_frames(T, blocks):
    """Sites of the Koszul twist on a composite ((-, T), blocks): each
    all-leaf vertex, with the Koszul sign for shuffling its suspension out
    to the blocks it eats.  Yields (dw, lw, slots, sign, upper tree,
    block skeleton with None at the merged slot)."""
    vpaths = list(_vertex_paths(T))
    vpos = {q: i for i, q in enumerate(vpaths)}
    m = len(vpaths)
    r = len(blocks)
    wdeg = [_subtree_at(T, q)[1][0] + 1 for q in vpaths]
    bdeg = [dy for _, (dy, _) in blocks]
    for path in vpaths:
        node = _subtree_at(T, path)
        if any(ch[0] != "L" for ch in node[2]):
            continue
        slots = tuple(ch[1] for ch in node[2])
        dw, lw = node[1]
        l0 = slots[0]
        dropped = set(slots[1:])
        target = [i for i, q in enumerate(vpaths) if q != path]
        for j in range(r):
            if j in dropped:
                continue
            if j == l0:
                target.append(vpos[path])
                target.extend(m + l for l in slots)
            else:
                target.append(m + j)
        perm = [0] * (m + r)
        for pos2, i in enumerate(target):
            perm[i] = pos2
        sgn = -koszul_reorder_sign(wdeg + bdeg, perm)
        # overall minus on the twisting morphism: the mixed squares
        # d o twist + twist o d are linear in it, twist o twist quadratic,
        # and only this choice makes d^2 = 0 (revalidated at every build)
        pre = sum(wdeg) - wdeg[vpos[path]] + sum(bdeg[:l0])
        if pre % 2:
            sgn = -sgn
        t2 = _relabel_leaves(_replace_at(T, path, ("L", l0)),
                             lambda j: j - sum(1 for x in dropped if x < j))
        skel = [None if j == l0 else blocks[j]
                for j in range(r) if j not in dropped]
        yield dw, lw, slots, sgn, t2, skel


def _twist_terms(p: DgOperad, pidx, label):
    """Twisted differential on one composite label: the suspension of an
    all-leaf vertex is cancelled and the operation multiplies into the
    blocks below it.  Returns [(label one degree down, int)]."""
    (dT, T), blocks = label
    if T[0] == "L":
        return []
    out = []
    for dw, lw, slots, sgn, t2, skel in _twist_frames(T, blocks):
        args = tuple(blocks[l] for l in slots)
        mdeg, acc = _gamma_fold(p, len(slots), dw, lw, args)
        if not acc:
            continue
        spts, fin = _resort_merged(p, pidx, [blocks[l][0] for l in slots],
                                   mdeg, acc)
        for lb, cb in fin.items():
            blocks2 = tuple((spts, (mdeg, lb)) if e is None else e
                            for e in skel)
            out.append((((dT - dw - 1, t2), blocks2), sgn * cb))
    return out


def _plug_terms(p: DgOperad, pidx, label):
    """Free right-module structure map on one composite label of
    (K o P)(n): plug the outer operations into the inner composite's own
    blocks.  Degree 0.  Returns [(K-shaped label, int)]."""
    (dK, kl), oblocks = label
    (dT, T), xbl = kl
    mt = sum(1 for _ in _vertex_paths(T))
    rt = len(xbl)
    src_deg = ([_subtree_at(T, q)[1][0] + 1 for q in _vertex_paths(T)]
               + [dy for _, (dy, _) in xbl]
               + [dq for _, (dq, _) in oblocks])
    target = list(range(mt))
    for bslot in range(rt):
        target.append(mt + bslot)
        target.extend(mt + rt + i for i in xbl[bslot][0])
    perm = [0] * len(src_deg)
    for pos2, i in enumerate(target):
        perm[i] = pos2
    sgn0 = koszul_reorder_sign(src_deg, perm)
    results = [((), 1)]
    for bslot in range(rt):
        pts_idx, (dpb, lpb) = xbl[bslot]
        args = tuple(oblocks[i] for i in pts_idx)
        mdeg, acc = _gamma_fold(p, len(pts_idx), dpb, lpb, args)
        if not acc:
            return []
        spts, fin = _resort_merged(p, pidx, [oblocks[i][0] for i in pts_idx],
                                   mdeg, acc)
        results = [(done + ((spts, (mdeg, lb)),), c0 * cb)
                   for done, c0 in results for lb, cb in fin.items()]
    return [(((dT, T), blocks2), sgn0 * c) for blocks2, c in results]


def _root_closed_sets(paths):
    """Subsets of vertex paths closed under passing to the parent."""
    out = []
    for bits in itertools.product((0, 1), repeat=len(paths)):
        u = {q for q, b in zip(paths, bits) if b}
        if all(q == () or q[:-1] in u for q in u):
            out.append(u)
    return out


def _composite_cut_terms(label):
    """Left-coaction terms on one composite label ((dT, T), blocks): every
    root-closed vertex set stays upstairs; the cut-off subtrees keep their
    blocks and become composite elements downstairs, single leaves become
    unit-tree composites.  Degree 0, pure shuffle signs.  Returns
    [(label in upper-tree o composite shape, int)]."""
    (dT, T), blocks = label
    vpaths = list(_vertex_paths(T))
    wdeg = {q: _subtree_at(T, q)[1][0] + 1 for q in vpaths}
    bdeg = [dy for _, (dy, _) in blocks]
    r = len(blocks)
    out = []
    for u in _root_closed_sets(vpaths):
        comps = []

        def walk(path, sub):
            if sub[0] == "L":
                comps.append(("leaf", sub[1]))
                return ("L", sub[1])
            if path not in u:
                mn = _leaf_min(sub)
                comps.append(("sub", path, mn))
                return ("L", mn)
            return ("N", sub[1],
                    tuple(walk(path + (i,), ch)
                          for i, ch in enumerate(sub[2])))

        t_up = walk((), T)
        comps.sort(key=lambda e: e[1] if e[0] == "leaf" else e[2])
        rankmap = {(e[1] if e[0] == "leaf" else e[2]): i
                   for i, e in enumerate(comps)}
        t_up2 = _relabel_leaves(t_up, lambda j: rankmap[j])
        d_up = sum(wdeg[q] for q in u)
        target_ids = [("v", q) for q in vpaths if q in u]
        lowers = []
        for e in comps:
            if e[0] == "leaf":
                l = e[1]
                pts, (dp, plab) = blocks[l]
                kl = ((0, ("L", 0)),
                      ((tuple(range(len(pts))), (dp, plab)),))
                lowers.append((pts, (dp, kl)))
                target_ids.append(("b", l))
            else:
                path = e[1]
                sub = _subtree_at(T, path)
                ls = sorted(_leaves(sub))
                union = sorted(q for l in ls for q in blocks[l][0])
                rk = {q: i for i, q in enumerate(union)}
                lrk = {l: i for i, l in enumerate(ls)}
                s2 = _relabel_leaves(sub, lambda j: lrk[j])
                bl2 = tuple((tuple(rk[q] for q in blocks[l][0]), blocks[l][1])
                            for l in ls)
                subpaths = [path + qq for qq in _vertex_paths(sub)]
                dtree = sum(wdeg[q] for q in subpaths)
                dsub = dtree + sum(blocks[l][1][0] for l in ls)
                lowers.append((tuple(union), (dsub, ((dtree, s2), bl2))))
                target_ids.extend(("v", q) for q in subpaths)
                target_ids.extend(("b", l) for l in ls)
        src_ids = [("v", q) for q in vpaths] + [("b", l) for l in range(r)]
        pos = {sid: i for i, sid in enumerate(target_ids)}
        perm = [pos[sid] for sid in src_ids]
        sgn = koszul_reorder_sign([wdeg[q] for q in vpaths] + bdeg, perm)
        out.append((((d_up, t_up2), tuple(lowers)), sgn))
    return out


class KoszulComplex:
    """bar(p) o p with the twisted differential, plus its augmentation to
    the composition unit, the right p-module map, and the left bar(p)-
    comodule map, all as validated chain maps."""

    def __init__(self, operad, bar_cooperad, carrier, augmentation,
                 right_action, left_coaction):
        self.operad = operad
        self.bar = bar_cooperad
        self.carrier = carrier
        self.ring = carrier.ring
        self.augmentation = augmentation
        self.right_action = right_action
        self.left_coaction = left_coaction

    def component(self, n):
        return self.carrier.component(n)

    def __repr__(self):
        return (f"KoszulComplex({self.operad.name}, "
                f"arities {self.carrier.arities()})")


def koszul_complex(p: DgOperad, r_max=None) -> KoszulComplex:
    """Twisted composite K(p) = bar(p) o p.

    Each arity is rebuilt from the orbit pieces of the composition product
    with the twist added to the differential, so d^2 = 0 and equivariance
    are revalidated; the three structure maps are validated ChainMaps.
    Over Z the orbit machinery refuses genuinely torsion composites
    (odd-degree blocks meeting themselves with a sign); use a field there.
    """
    if not p.is_reduced():
        raise NotReduced("the Koszul complex needs a reduced operad")
    ring = p.ring
    if r_max is None:
        r_max = p.carrier.r_max
    b = bar(p, r_max=r_max)
    bcar = b.carrier
    pcar = p.carrier
    pidx = {r: _index_map(c) for r, c in pcar.components.items()}
    comps = {}
    data = {}
    for n in range(1, r_max + 1):
        comp, pieces, offsets = _compose_arity(bcar, pcar, n, "orbits")
        if comp is None:
            continue
        byr = {pc.r: pc for pc in pieces}
        diff = {}
        for d in range(comp.d_min + 1, comp.d_max + 1):
            entries = dict(comp.diff[d].entries)
            for pc in pieces:
                off = offsets[(pc.r, d)]
                for pos, lab in enumerate(pc.labels.get(d, [])):
                    for lab2, co in _twist_terms(p, pidx, lab):
                        qc = byr.get(len(lab2[1]))
                        bigi = (qc.index.get(d - 1, {}).get(lab2)
                                if qc is not None else None)
                        if bigi is None:
                            raise Overflow(
                                f"twist image left the basis: {lab2!r}")
                        pos2, s2 = qc.locate(d - 1, bigi)
                        if pos2 is None:
                            continue
                        _acc_entry(ring, entries,
                                   offsets[(qc.r, d - 1)] + pos2, off + pos,
                                   ring.from_int(co * s2))
            diff[d] = SparseMatrix(ring, comp.rank(d - 1), comp.rank(d),
                                   entries)
        comps[n] = GComplex(ring, _sym(n), (comp.d_min, comp.d_max),
                            comp.basis, diff, comp.action)
        data[n] = (byr, offsets)
    carrier = SymSeq(ring, comps, r_max=r_max)

    unitseq = SymSeq.compose_unit(ring)
    acomp = {}
    k1 = comps.get(1)
    if k1 is not None:
        m = {0: SparseMatrix(ring, 1, k1.rank(0), {(0, 0): ring.one()})}
        acomp[1] = ChainMap(k1, unitseq.component(1), m)
    aug = SymSeqMap(carrier, unitseq, acomp)

    pol = TruncationPolicy(
        r_max,
        carrier.window[0] + r_max * min(0, pcar.window[0]),
        carrier.window[1] + r_max * max(0, pcar.window[1]),
        "silently_truncate_with_flag")
    src = compose(carrier, pcar, "orbits", policy=pol)
    rcomps = {}
    for n, sc in src.components.items():
        kc = comps.get(n)
        if kc is None:
            continue
        byr, offsets = data[n]
        mats = {}
        for d in sc.degree_range():
            entries = {}
            for col, lab in enumerate(sc.basis.get(d, [])):
                for lab2, co in _plug_terms(p, pidx, lab):
                    qc = byr.get(len(lab2[1]))
                    bigi = (qc.index.get(d, {}).get(lab2)
                            if qc is not None else None)
                    if bigi is None:
                        raise Overflow(
                            f"module image left the basis: {lab2!r}")
                    pos2, s2 = qc.locate(d, bigi)
                    if pos2 is None:
                        continue
                    _acc_entry(ring, entries, offsets[(qc.r, d)] + pos2, col,
                               ring.from_int(co * s2))
            mats[d] = SparseMatrix(ring, kc.rank(d), sc.rank(d), entries)
        rcomps[n] = ChainMap(sc, kc, mats)
    right = SymSeqMap(src, carrier, rcomps)

    def norm_lower(m2, dsub, raw):
        # project a hand-built composite label of K(m2) onto the chosen
        # orbit representative: (quotient label, sign) or (None, 0)
        byr2, off2 = data[m2]
        pc2 = byr2.get(len(raw[1]))
        bigi = (pc2.index.get(dsub, {}).get(raw)
                if pc2 is not None else None)
        if bigi is None:
            raise Overflow(f"coaction factor left the basis: {raw!r}")
        pos2, s2 = pc2.locate(dsub, bigi)
        if pos2 is None:
            return None, 0
        return comps[m2].basis[dsub][off2[(pc2.r, dsub)] + pos2], s2

    lcomps = {}
    tcomps = {}
    for n, kc in comps.items():
        tcomp, tpieces, toffsets = _compose_arity(bcar, carrier, n, "orbits")
        if tcomp is None:
            continue
        tbyr = {pc.r: pc for pc in tpieces}
        mats = {}
        for d in kc.degree_range():
            entries = {}
            for col, lab in enumerate(kc.basis.get(d, [])):
                for lab2raw, co in _composite_cut_terms(lab):
                    up, lowers = lab2raw
                    lowers2 = []
                    for pts, (dsub, raw) in lowers:
                        qlab, s2 = norm_lower(len(pts), dsub, raw)
                        if qlab is None:
                            co = 0
                            break
                        co *= s2
                        lowers2.append((pts, (dsub, qlab)))
                    if co == 0:
                        continue
                    lab2 = (up, tuple(lowers2))
                    qc = tbyr.get(len(lowers2))
                    bigi = (qc.index.get(d, {}).get(lab2)
                            if qc is not None else None)
                    if bigi is None:
                        raise Overflow(
                            f"coaction image left the basis: {lab2!r}")
                    pos2, s2 = qc.locate(d, bigi)
                    if pos2 is None:
                        continue
                    _acc_entry(ring, entries, toffsets[(qc.r, d)] + pos2, col,
                               ring.from_int(co * s2))
            mats[d] = SparseMatrix(ring, tcomp.rank(d), kc.rank(d), entries)
        tcomps[n] = tcomp
        lcomps[n] = ChainMap(kc, tcomp, mats)
    tgt = SymSeq(ring, tcomps, r_max=r_max, truncated=True)
    left = SymSeqMap(carrier, tgt, lcomps)
    return KoszulComplex(p, b, carrier, aug, right, left)


# ---------------------------------------------------------------------------
# algebras and their bar construction


class PAlgebra:
    """An algebra over a DgOperad on a finite chain complex.

    structure_fn(m, d, lab, args) gives the action of a degree-d arity-m
    basis operation on a tuple of algebra basis elements
    args = ((da, alab), ...) as {alabel: coefficient} in degree
    d + sum(da).  The composition unit always acts as the identity and
    need not be covered.  Construction checks associativity

        mu(l o_k q; a) = (-1)^{|q| (|a_0|+...+|a_{k-1}|)}
                         mu(l; a_0, ..., mu(q; a_k, ...), ...)

    and the Leibniz rule on the whole basis, raising
    StructureMapsNotAssociative on the first failure.
    """

    def __init__(self, operad: DgOperad, complex_: GComplex, structure_fn,
                 name="A", check=True):
        if complex_.ring != operad.ring:
            raise ValueError("algebra ring differs from the operad's")
        self.operad = operad
        self.complex = complex_
        self.ring = operad.ring
        self._fn = structure_fn
        self.name = name
        self._cache = {}
        if check:
            self._check()

    def act(self, m, d, lab, args):
        """{alabel: ring coefficient} in degree d + sum of arg degrees."""
        if m == 1 and (d, lab) == self.operad.unit:
            (_, alab), = args
            return {alab: self.ring.one()}
        key = (m, d, lab, tuple(args))
        got = self._cache.get(key)
        if got is None:
            got = {}
            for alab, v in self._fn(m, d, lab, tuple(args)).items():
                vv = self.ring.from_int(v) if isinstance(v, int) else v
                if not self.ring.is_zero(vv):
                    got[alab] = vv
            self._cache[key] = got
        return got

    def _act_elem(self, m, d, lab, pre, mid_deg, mid, post):
        # one slot fed a linear combination
        ring = self.ring
        out = {}
        for alab, c in mid.items():
            for bl, v in self.act(m, d, lab,
                                  pre + ((mid_deg, alab),) + post).items():
                w = ring.add(out.get(bl, ring.zero()), ring.mul(c, v))
                if ring.is_zero(w):
                    out.pop(bl, None)
                else:
                    out[bl] = w
        return out

    def _check(self):
        p, a, ring = self.operad, self.complex, self.ring
        abasis = [(d, lab) for d in a.degree_range()
                  for lab in a.basis.get(d, [])]
        pbasis = {}
        for r in p.carrier.arities():
            c = p.carrier.component(r)
            pbasis[r] = [(d, lab) for d in c.degree_range()
                         for lab in c.basis.get(d, [])]

        def mu(m, d, lab, args):
            return self.act(m, d, lab, args)

        # associativity against every partial composite in the carrier
        for r, s in itertools.product(pbasis, repeat=2):
            if r < 2 and s < 2:
                continue
            for k in range(r):
                for (dl, ll), (dq, lq) in itertools.product(pbasis[r],
                                                            pbasis[s]):
                    try:
                        comp = p.compose_basis(r, k, s, dl, ll, dq, lq)
                    except Overflow:
                        continue
                    for args in itertools.product(abasis, repeat=r + s - 1):
                        lhs = {}
                        for lc, cc in comp.items():
                            for bl, v in mu(r + s - 1, dl + dq, lc,
                                            args).items():
                                w = ring.add(lhs.get(bl, ring.zero()),
                                             ring.mul(ring.from_int(cc)
                                                      if isinstance(cc, int)
                                                      else cc, v))
                                if ring.is_zero(w):
                                    lhs.pop(bl, None)
                                else:
                                    lhs[bl] = w
                        inner = mu(s, dq, lq, args[k:k + s])
                        mid_deg = dq + sum(da for da, _ in args[k:k + s])
                        rhs = self._act_elem(r, dl, ll, args[:k], mid_deg,
                                             inner, args[k + s:])
                        if dq % 2 and sum(da for da, _ in args[:k]) % 2:
                            rhs = {bl: ring.neg(v) for bl, v in rhs.items()}
                        if lhs != rhs:
                            raise StructureMapsNotAssociative(
                                f"{self.name}: mu(l o_{k} q) != mu(l)mu(q) "
                                f"at r={r} s={s} l={ll!r} q={lq!r} "
                                f"args={args!r}")
        # Leibniz rule
        for r, ops in pbasis.items():
            c = p.carrier.component(r)
            for d, lab in ops:
                dop = _diff_elem(c, d, {lab: ring.one()})
                for args in itertools.product(abasis, repeat=r):
                    tdeg = d + sum(da for da, _ in args)
                    lhs = _diff_elem(a, tdeg, mu(r, d, lab, args))
                    rhs = {}
                    for bl, v in dop.items():
                        for al, w in mu(r, d - 1, bl, args).items():
                            u = ring.add(rhs.get(al, ring.zero()),
                                         ring.mul(v, w))
                            if ring.is_zero(u):
                                rhs.pop(al, None)
                            else:
                                rhs[al] = u
                    sgn = d
                    for i, (da, alab) in enumerate(args):
                        part = _diff_elem(a, da, {alab: ring.one()})
                        got = self._act_elem(r, d, lab, args[:i], da - 1,
                                             part, args[i + 1:])
                        for al, w in got.items():
                            w2 = ring.neg(w) if sgn % 2 else w
                            u = ring.add(rhs.get(al, ring.zero()), w2)
                            if ring.is_zero(u):
                                rhs.pop(al, None)
                            else:
                                rhs[al] = u
                        sgn += da
                    if lhs != rhs:
                        raise StructureMapsNotAssociative(
                            f"{self.name}: Leibniz fails at r={r} "
                            f"op={lab!r} args={args!r}")


def trivial_algebra(p: DgOperad, complex_: GComplex, name="triv") -> PAlgebra:
    """All operations of arity >= 2 act by zero; the unit by identity."""
    return PAlgebra(p, complex_, lambda m, d, lab, args: {}, name=name)


class BarAlgebra:
    """The bar coalgebra of an algebra over an operad: a validated chain
    complex together with its left bar(p)-comodule map.

    The comodule target bar(p) o (this complex) takes coinvariants of
    tuples that may repeat an odd-degree element, so over Z it can carry
    2-torsion; the coaction is therefore built on first access and raises
    ShapeUnsupported when that happens."""

    def __init__(self, operad, algebra, bar_cooperad, complex_, make_coaction):
        self.operad = operad
        self.algebra = algebra
        self.bar = bar_cooperad
        self.complex = complex_
        self._make_coaction = make_coaction
        self._coaction = None

    @property
    def coaction(self):
        if self._coaction is None:
            self._coaction = self._make_coaction()
        return self._coaction

    def __repr__(self):
        return f"BarAlgebra({self.operad.name}, {self.algebra.name})"


def bar_algebra(p: DgOperad, a: PAlgebra, r_max=None) -> BarAlgebra:
    """Trees of bar(p) with algebra elements on the leaves: the arity-0
    composite bar(p) o A, its differential twisted by the structure maps
    (each all-leaf vertex acts on its arguments).

    The resulting complex revalidates d^2 = 0, and the coaction (cutting
    root-closed vertex sets exactly as in the Koszul complex) is a
    validated ChainMap into bar(p) o (the twisted complex).
    """
    if a.operad is not p:
        raise ValueError("algebra is not over this operad")
    ring = p.ring
    if r_max is None:
        r_max = p.carrier.r_max
    b = bar(p, r_max=r_max)
    bcar = b.carrier
    aseq = SymSeq(ring, {0: a.complex})
    comp, pieces, offsets = _compose_arity(bcar, aseq, 0, "orbits")
    if comp is None:
        z = GComplex(ring, _sym(0), (0, 0), {0: []}, {})
        return BarAlgebra(p, a, b, z, lambda: ChainMap(z, z, {}))
    byr = {pc.r: pc for pc in pieces}
    diff = {}
    for d in range(comp.d_min + 1, comp.d_max + 1):
        entries = dict(comp.diff[d].entries)
        for pc in pieces:
            off = offsets[(pc.r, d)]
            for pos, lab in enumerate(pc.labels.get(d, [])):
                (dT, T), blocks = lab
                if T[0] == "L":
                    continue
                for dw, lw, slots, sgn, t2, skel in _twist_frames(T, blocks):
                    args = tuple(blocks[l][1] for l in slots)
                    got = a.act(len(slots), dw, lw, args)
                    if not got:
                        continue
                    mdeg = dw + sum(da for da, _ in args)
                    for alab, cv in got.items():
                        blocks2 = tuple(((), (mdeg, alab)) if e is None else e
                                        for e in skel)
                        lab2 = ((dT - dw - 1, t2), blocks2)
                        qc = byr.get(len(blocks2))
                        bigi = (qc.index.get(d - 1, {}).get(lab2)
                                if qc is not None else None)
                        if bigi is None:
                            raise Overflow(
                                f"twist image left the basis: {lab2!r}")
                        pos2, s2 = qc.locate(d - 1, bigi)
                        if pos2 is None:
                            continue
                        _acc_entry(ring, entries,
                                   offsets[(qc.r, d - 1)] + pos2, off + pos,
                                   ring.mul(ring.from_int(sgn * s2), cv))
        diff[d] = SparseMatrix(ring, comp.rank(d - 1), comp.rank(d), entries)
    bc = GComplex(ring, _sym(0), (comp.d_min, comp.d_max), comp.basis, diff,
                  comp.action)

    def norm_lower(dsub, raw):
        pc2 = byr.get(len(raw[1]))
        bigi = (pc2.index.get(dsub, {}).get(raw)
                if pc2 is not None else None)
        if bigi is None:
            raise Overflow(f"coaction factor left the basis: {raw!r}")
        pos2, s2 = pc2.locate(dsub, bigi)
        if pos2 is None:
            return None, 0
        return bc.basis[dsub][offsets[(pc2.r, dsub)] + pos2], s2

    def make_coaction():
        tcomp, tpieces, toffsets = _compose_arity(bcar, SymSeq(ring, {0: bc}),
                                                  0, "orbits")
        tbyr = {pc.r: pc for pc in tpieces}
        mats = {}
        for d in bc.degree_range():
            entries = {}
            for col, lab in enumerate(bc.basis.get(d, [])):
                for lab2raw, co in _composite_cut_terms(lab):
                    up, lowers = lab2raw
                    lowers2 = []
                    for pts, (dsub, raw) in lowers:
                        qlab, s2 = norm_lower(dsub, raw)
                        if qlab is None:
                            co = 0
                            break
                        co *= s2
                        lowers2.append((pts, (dsub, qlab)))
                    if co == 0:
                        continue
                    lab2 = (up, tuple(lowers2))
                    qc = tbyr.get(len(lowers2))
                    bigi = (qc.index.get(d, {}).get(lab2)
                            if qc is not None else None)
                    if bigi is None:
                        raise Overflow(
                            f"coaction image left the basis: {lab2!r}")
                    pos2, s2 = qc.locate(d, bigi)
                    if pos2 is None:
                        continue
                    _acc_entry(ring, entries, toffsets[(qc.r, d)] + pos2, col,
                               ring.from_int(co * s2))
            mats[d] = SparseMatrix(ring, tcomp.rank(d), bc.rank(d), entries)
        return ChainMap(bc, tcomp, mats)

    return BarAlgebra(p, a, b, bc, make_coaction)


# ---------------------------------------------------------------------------
# functoriality


def _map_tree(ring, f: SymSeqMap, t):
    """Apply a vertexwise map to one tree; {tree: ring coefficient}."""
    if t[0] == "L":
        return {t: ring.one()}
    d, lab = t[1]
    m = len(t[2])
    comp = f.components.get(m)
    if comp is None:
        return {}
    src = f.source.component(m)
    col = {la: i for i, la in enumerate(src.basis.get(d, []))}.get(lab)
    if col is None:
        return {}
    tgt = f.target.component(m)
    out = {}
    mat = comp.components.get(d)
    if mat is None:
        return {}
    kidparts = {(): ring.one()}
    for ch in t[2]:
        sub = _map_tree(ring, f, ch)
        kidparts = {ks + (t2,): ring.mul(c0, c2)
                    for ks, c0 in kidparts.items()
                    for t2, c2 in sub.items()}
    for row, v in mat.column(col).items():
        lab2 = tgt.basis[d][row]
        for ks, c in kidparts.items():
            t2 = ("N", (d, lab2), ks)
            w = ring.add(out.get(t2, ring.zero()), ring.mul(v, c))
            if ring.is_zero(w):
                out.pop(t2, None)
            else:
                out[t2] = w
    return out


def _vertexwise_map(f: SymSeqMap, src: SymSeq, tgt: SymSeq, name):
    ring = src.ring
    comps = {}
    for n, sc in src.components.items():
        tc = tgt.component(n)
        if tc is None:
            continue
        tidx = _index_map(tc)
        mats = {}
        for d in sc.degree_range():
            entries = {}
            for col, t in enumerate(sc.basis.get(d, [])):
                for t2, v in _map_tree(ring, f, t).items():
                    row = tidx.get(d, {}).get(t2)
                    if row is None:
                        continue
                    _acc_entry(ring, entries, row, col, v)
            mats[d] = SparseMatrix(ring, tc.rank(d), sc.rank(d), entries)
        comps[n] = ChainMap(sc, tc, mats)
    return SymSeqMap(src, tgt, comps)


def induced_bar_map(f: SymSeqMap, bsrc: DgCooperad,
                    btgt: DgCooperad) -> SymSeqMap:
    """bar is functorial: a map of operads f (as a SymSeqMap of carriers,
    unit to unit) induces the vertexwise map bar(f), a validated map of
    carriers commuting with the cocomposition."""
    return _vertexwise_map(f, bsrc.carrier, btgt.carrier, "bar")


def induced_cobar_map(h: SymSeqMap, qsrc: DgOperad,
                      qtgt: DgOperad) -> SymSeqMap:
    """cobar is functorial in maps of cooperads, again vertexwise."""
    return _vertexwise_map(h, qsrc.carrier, qtgt.carrier, "cobar")
