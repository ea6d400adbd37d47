"""Symmetric sequences of chain complexes and their products.

A symmetric sequence assigns to each arity r a chain complex carrying an
action of Sigma_r.  This module implements the Day convolution tensor, the
levelwise tensor, and the composition product in two strict flavours,
orbits and invariants, related by a norm map.  Everything here is a finite
truncation of an in-principle unbounded object; a TruncationPolicy states
what to do when a construction outgrows the caller's bounds.

Composite basis labels are trees of (degree, label) pairs of the inputs
together with an explicit assignment of points to slots: a composition
basis element is ((dx, xlab), ((block_1, (d1, ylab_1)), ...)) where the
blocks form an ordered partition of the points 0..n-1.  Orbit bases are
the lexicographically least representatives (in repr order); invariant
bases are the signed orbit sums, labelled by the same representatives.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

from .coeff import OpcalcError, Ring, SparseMatrix
from .complexes import (
    ChainMap,
    GComplex,
    RingMismatch,
    ShapeUnsupported,
    symmetric_group,
)
from .complexes import _fixed_coords, _fixed_points_data, _orbit_data


class Overflow(OpcalcError):
    pass


class DivergenceGuard(OpcalcError):
    pass


@lru_cache(maxsize=None)
def _sym(r: int):
    return symmetric_group(r)


class TruncationPolicy:
    """Bounds for the output of a product construction.

    on_overflow 'error' raises Overflow when nonzero output falls outside
    the bounds; 'silently_truncate_with_flag' drops it and marks the result.
    """

    def __init__(self, r_max: int, d_min: int, d_max: int, on_overflow: str = "error"):
        if d_min > d_max:
            raise ValueError("d_min <= d_max required")
        if on_overflow not in ("error", "silently_truncate_with_flag"):
            raise ValueError(f"unknown overflow mode {on_overflow!r}")
        self.r_max = r_max
        self.d_min = d_min
        self.d_max = d_max
        self.on_overflow = on_overflow

    def __repr__(self):
        return (f"TruncationPolicy(r_max={self.r_max}, window=[{self.d_min},"
                f"{self.d_max}], {self.on_overflow})")


class SymSeq:
    """Arity-indexed chain complexes; component r carries Sigma_r.

    components: dict arity -> GComplex; absent or zero arities are dropped.
    The window is the hull of the component windows unless given.
    """

    def __init__(self, ring: Ring, components: dict, r_max=None, window=None,
                 truncated: bool = False):
        self.ring = ring
        comps = {}
        for r, c in sorted(components.items()):
            if c is None or all(c.rank(d) == 0 for d in c.degree_range()):
                continue
            if c.ring != ring:
                raise RingMismatch("component ring differs from sequence ring")
            if c.group.elements != _sym(r).elements:
                raise ValueError(f"arity-{r} component must carry Sigma_{r}")
            comps[r] = c
        self.components = comps
        self.r_max = r_max if r_max is not None else (max(comps) if comps else 0)
        if comps and max(comps) > self.r_max:
            raise ValueError("component beyond r_max")
        if window is None:
            if comps:
                window = (min(c.d_min for c in comps.values()),
                          max(c.d_max for c in comps.values()))
            else:
                window = (0, 0)
        if window[0] > window[1]:
            raise ValueError("empty degree window")
        self.window = (window[0], window[1])
        self.truncated = truncated

    def component(self, r: int):
        return self.components.get(r)

    def arities(self):
        return sorted(self.components)

    def rank(self, r: int, d: int) -> int:
        c = self.components.get(r)
        return c.rank(d) if c is not None else 0

    def is_zero(self) -> bool:
        return not self.components

    def change_ring(self, ring: Ring) -> "SymSeq":
        return SymSeq(ring, {r: c.change_ring(ring) for r, c in self.components.items()},
                      r_max=self.r_max, window=self.window, truncated=self.truncated)

    def __repr__(self):
        parts = ", ".join(f"{r}:{[c.rank(d) for d in c.degree_range()]}"
                          for r, c in sorted(self.components.items()))
        return f"SymSeq({self.ring}, r_max={self.r_max}, {{{parts}}})"

    # serialization: GComplex schema under arity keys; labels become strings

    def to_json_obj(self):
        return {
            "ring": self.ring.to_json_obj(),
            "r_max": self.r_max,
            "window": list(self.window),
            "truncated": self.truncated,
            "components": {str(r): c.to_json_obj() for r, c in self.components.items()},
        }

    @staticmethod
    def from_json_obj(obj) -> "SymSeq":
        ring = Ring.from_json_obj(obj["ring"])
        comps = {int(r): GComplex.from_json_obj(c) for r, c in obj["components"].items()}
        return SymSeq(ring, comps, r_max=obj["r_max"], window=tuple(obj["window"]),
                      truncated=obj.get("truncated", False))

    @staticmethod
    def compose_unit(ring: Ring) -> "SymSeq":
        """R in arity 1, degree 0: the unit for the composition product."""
        return SymSeq(ring, {1: GComplex(ring, _sym(1), (0, 0), {0: ["1"]}, {})})

    @staticmethod
    def day_unit(ring: Ring) -> "SymSeq":
        """R in arity 0, degree 0: the unit for the Day tensor."""
        return SymSeq(ring, {0: GComplex(ring, _sym(0), (0, 0), {0: ["1"]}, {})})

    @staticmethod
    def constant(ring: Ring, r_max: int) -> "SymSeq":
        """Trivial R in every arity 1..r_max: the unit for the levelwise tensor."""
        comps = {}
        for r in range(1, r_max + 1):
            g = _sym(r)
            act = {s: {0: ([0], [1])} for s in g.generators}
            comps[r] = GComplex(ring, g, (0, 0), {0: ["c"]}, {}, act)
        return SymSeq(ring, comps, r_max=r_max)


def direct_sum(x: SymSeq, y: SymSeq) -> SymSeq:
    """Arity-wise block sum, labels tagged ('l', -) and ('r', -)."""
    if x.ring != y.ring:
        raise RingMismatch("direct_sum needs one ring")
    ring = x.ring
    comps = {}
    for r in sorted(set(x.arities()) | set(y.arities())):
        xc, yc = x.component(r), y.component(r)
        if xc is None or yc is None:
            one = xc if xc is not None else yc
            tag = "l" if xc is not None else "r"
            basis = {d: [(tag, b) for b in one.basis.get(d, [])] for d in one.degree_range()}
            comps[r] = GComplex(ring, one.group, (one.d_min, one.d_max), basis,
                                one.diff, one.action, validate=False)
            continue
        lo, hi = min(xc.d_min, yc.d_min), max(xc.d_max, yc.d_max)
        basis = {d: [("l", b) for b in xc.basis.get(d, [])] +
                    [("r", b) for b in yc.basis.get(d, [])] for d in range(lo, hi + 1)}
        diff = {}
        for d in range(lo + 1, hi + 1):
            entries = {}
            nx_lo = xc.rank(d - 1)
            if xc.d_min < d <= xc.d_max:
                entries.update(xc.diff[d].entries)
            if yc.d_min < d <= yc.d_max:
                for (i, j), v in yc.diff[d].entries.items():
                    entries[(nx_lo + i, xc.rank(d) + j)] = v
            diff[d] = SparseMatrix(ring, len(basis[d - 1]), len(basis[d]), entries)
        act = {}
        for s in _sym(r).generators:
            per = {}
            for d in range(lo, hi + 1):
                px, sx = xc.full_action(s, d) if xc.rank(d) else ([], [])
                py, sy = yc.full_action(s, d) if yc.rank(d) else ([], [])
                per[d] = (list(px) + [xc.rank(d) + j for j in py], list(sx) + list(sy))
            act[s] = per
        comps[r] = GComplex(ring, _sym(r), (lo, hi), basis, diff, act)
    return SymSeq(ring, comps, r_max=max(x.r_max, y.r_max))


# ---------------------------------------------------------------------------
# sign bookkeeping


def koszul_reorder_sign(degrees, perm) -> int:
    """Sign for sending graded factor i to slot perm[i]: one factor of
    (-1)^{|v_i||v_j|} for every pair i < j landing out of order."""
    s = 1
    for i in range(len(degrees)):
        if degrees[i] % 2 == 0:
            continue
        for j in range(i + 1, len(degrees)):
            if degrees[j] % 2 and perm[i] > perm[j]:
                s = -s
    return s


def _induced_block_perm(g, block):
    """g an image tuple on ambient points, block a sorted tuple of points:
    the permutation of positions induced by restricting g to the block."""
    img = [g[p] for p in block]
    pos = {v: i for i, v in enumerate(sorted(img))}
    return tuple(pos[v] for v in img)


def _unit_int(ring: Ring, v) -> int:
    if v == ring.one():
        return 1
    if v == ring.from_int(-1):
        return -1
    raise ValueError("expected a sign")


def _label_index(gc: GComplex) -> dict:
    return {d: {b: i for i, b in enumerate(gc.basis.get(d, []))}
            for d in gc.degree_range()}


# ---------------------------------------------------------------------------
# Day convolution tensor


def day_tensor(x: SymSeq, y: SymSeq, policy: TruncationPolicy | None = None) -> SymSeq:
    """(x (x) y)(n) = sum over p+q=n of Ind from Sigma_p x Sigma_q of
    x(p) (x) y(q), induced along the (p, q)-shuffles.

    Basis labels (S, (dx, xlab), (dy, ylab)): S the sorted set of points fed
    to the x factor, the complement to the y factor, both order-preservingly.
    """
    if x.ring != y.ring:
        raise RingMismatch("day_tensor needs one ring")
    ring = x.ring
    comps = {}
    n_hi = x.r_max + y.r_max
    build_hi = n_hi if policy is None else min(n_hi, policy.r_max)
    for n in range(build_hi + 1):
        labels = {}
        for p in x.arities():
            q = n - p
            yc = y.component(q)
            if yc is None or q < 0:
                continue
            xc = x.component(p)
            for s_set in itertools.combinations(range(n), p):
                for dx in xc.degree_range():
                    for xlab in xc.basis.get(dx, []):
                        for dy in yc.degree_range():
                            for ylab in yc.basis.get(dy, []):
                                labels.setdefault(dx + dy, []).append(
                                    (s_set, (dx, xlab), (dy, ylab)))
        if not labels:
            continue
        for d in labels:
            labels[d].sort(key=repr)
        comps[n] = _day_component(x, y, n, labels)
    beyond = any(n - p in y.components for n in range(build_hi + 1, n_hi + 1)
                 for p in x.arities())
    if beyond and policy.on_overflow == "error":
        raise Overflow("result exceeds the truncation policy")
    out = SymSeq(ring, comps, r_max=max(comps) if comps else 0)
    out = _apply_policy(out, policy)
    out.truncated = out.truncated or beyond
    return out


def _day_component(x: SymSeq, y: SymSeq, n: int, labels: dict) -> GComplex:
    ring = x.ring
    lo, hi = min(labels), max(labels)
    basis = {d: labels.get(d, []) for d in range(lo, hi + 1)}
    index = {d: {b: i for i, b in enumerate(basis[d])} for d in basis}
    xidx = {p: _label_index(x.component(p)) for p in x.arities()}
    yidx = {q: _label_index(y.component(q)) for q in y.arities()}
    diff = {}
    for d in range(lo + 1, hi + 1):
        entries = {}
        for col, (s_set, (dx, xlab), (dy, ylab)) in enumerate(basis[d]):
            xc, yc = x.component(len(s_set)), y.component(n - len(s_set))
            m = xc.diff.get(dx)
            if m is not None:
                j = xidx[len(s_set)][dx][xlab]
                for (i, jj), v in m.entries.items():
                    if jj != j:
                        continue
                    row = index[d - 1][(s_set, (dx - 1, xc.basis[dx - 1][i]), (dy, ylab))]
                    entries[(row, col)] = ring.add(entries.get((row, col), ring.zero()), v)
            m = yc.diff.get(dy)
            if m is not None:
                sgn = ring.from_int((-1) ** dx)
                j = yidx[n - len(s_set)][dy][ylab]
                for (i, jj), v in m.entries.items():
                    if jj != j:
                        continue
                    row = index[d - 1][(s_set, (dx, xlab), (dy - 1, yc.basis[dy - 1][i]))]
                    entries[(row, col)] = ring.add(entries.get((row, col), ring.zero()),
                                                   ring.mul(sgn, v))
        entries = {k: v for k, v in entries.items() if not ring.is_zero(v)}
        diff[d] = SparseMatrix(ring, len(basis[d - 1]), len(basis[d]), entries)
    action = {}
    for g in _sym(n).generators:
        per = {}
        for d in range(lo, hi + 1):
            perm, signs = [], []
            for (s_set, (dx, xlab), (dy, ylab)) in basis[d]:
                comp = tuple(sorted(set(range(n)) - set(s_set)))
                xc, yc = x.component(len(s_set)), y.component(n - len(s_set))
                new_s = tuple(sorted(g[p] for p in s_set))
                sgn = 1
                tau = _induced_block_perm(g, s_set)
                if tau:
                    pa, sa = xc.full_action(tau, dx)
                    j = xidx[len(s_set)][dx][xlab]
                    xlab2, sgn = xc.basis[dx][pa[j]], sgn * sa[j]
                else:
                    xlab2 = xlab
                tau = _induced_block_perm(g, comp)
                if tau:
                    pb, sb = yc.full_action(tau, dy)
                    j = yidx[n - len(s_set)][dy][ylab]
                    ylab2, sgn = yc.basis[dy][pb[j]], sgn * sb[j]
                else:
                    ylab2 = ylab
                perm.append(index[d][(new_s, (dx, xlab2), (dy, ylab2))])
                signs.append(sgn)
            per[d] = (perm, signs)
        action[g] = per
    return GComplex(ring, _sym(n), (lo, hi), basis, diff, action)


# ---------------------------------------------------------------------------
# levelwise tensor


def lev_tensor(x: SymSeq, y: SymSeq) -> SymSeq:
    """(x (x)_lev y)(r) = x(r) (x) y(r), diagonal action, Koszul differential.

    Labels ((dx, xlab), (dy, ylab))."""
    if x.ring != y.ring:
        raise RingMismatch("lev_tensor needs one ring")
    ring = x.ring
    comps = {}
    for r in sorted(set(x.arities()) & set(y.arities())):
        xc, yc = x.component(r), y.component(r)
        lo, hi = xc.d_min + yc.d_min, xc.d_max + yc.d_max
        basis = {d: [] for d in range(lo, hi + 1)}
        for dx in xc.degree_range():
            for xlab in xc.basis.get(dx, []):
                for dy in yc.degree_range():
                    for ylab in yc.basis.get(dy, []):
                        basis[dx + dy].append(((dx, xlab), (dy, ylab)))
        for d in basis:
            basis[d].sort(key=repr)
        index = {d: {b: i for i, b in enumerate(basis[d])} for d in basis}
        xidx, yidx = _label_index(xc), _label_index(yc)
        diff = {}
        for d in range(lo + 1, hi + 1):
            entries = {}
            for col, ((dx, xlab), (dy, ylab)) in enumerate(basis[d]):
                m = xc.diff.get(dx)
                if m is not None:
                    j = xidx[dx][xlab]
                    for (i, jj), v in m.entries.items():
                        if jj == j:
                            row = index[d - 1][((dx - 1, xc.basis[dx - 1][i]), (dy, ylab))]
                            entries[(row, col)] = ring.add(
                                entries.get((row, col), ring.zero()), v)
                m = yc.diff.get(dy)
                if m is not None:
                    sgn = ring.from_int((-1) ** dx)
                    j = yidx[dy][ylab]
                    for (i, jj), v in m.entries.items():
                        if jj == j:
                            row = index[d - 1][((dx, xlab), (dy - 1, yc.basis[dy - 1][i]))]
                            entries[(row, col)] = ring.add(
                                entries.get((row, col), ring.zero()), ring.mul(sgn, v))
            entries = {k: v for k, v in entries.items() if not ring.is_zero(v)}
            diff[d] = SparseMatrix(ring, len(basis[d - 1]), len(basis[d]), entries)
        action = {}
        for g in _sym(r).generators:
            per = {}
            for d in range(lo, hi + 1):
                perm, signs = [], []
                for ((dx, xlab), (dy, ylab)) in basis[d]:
                    pa, sa = xc.full_action(g, dx)
                    pb, sb = yc.full_action(g, dy)
                    i, j = xidx[dx][xlab], yidx[dy][ylab]
                    perm.append(index[d][((dx, xc.basis[dx][pa[i]]),
                                          (dy, yc.basis[dy][pb[j]]))])
                    signs.append(sa[i] * sb[j])
                per[d] = (perm, signs)
            action[g] = per
        comps[r] = GComplex(ring, _sym(r), (lo, hi), basis, diff, action)
    return SymSeq(ring, comps, r_max=min(x.r_max, y.r_max))


# ---------------------------------------------------------------------------
# composition product


def _ordered_partitions(n: int, r: int, sizes) -> list:
    """Ordered partitions of range(n) into r blocks (possibly empty) whose
    sizes all lie in the given set, as tuples of sorted tuples."""
    out = []
    for f in itertools.product(range(r), repeat=n):
        blocks = [[] for _ in range(r)]
        for p, i in enumerate(f):
            blocks[i].append(p)
        if all(len(b) in sizes for b in blocks):
            out.append(tuple(tuple(b) for b in blocks))
    return out


def _compose_big(x: SymSeq, y: SymSeq, n: int, r: int):
    """X(r) (x) Y^{(x) r} in arity n over Sigma_r acting diagonally:
    on X(r), by permuting the blocks of the partition, and by Koszul signs
    for permuting the graded block entries.  Returns (GComplex, index)."""
    ring = x.ring
    xc = x.component(r)
    if xc is None:
        return None, None
    sizes = set(y.arities())
    parts = _ordered_partitions(n, r, sizes)
    if not parts:
        return None, None
    ychoices = {}
    for k in sizes:
        yc = y.component(k)
        ychoices[k] = [(dy, ylab) for dy in yc.degree_range()
                       for ylab in yc.basis.get(dy, [])]
    labels = {}
    for dx in xc.degree_range():
        for xlab in xc.basis.get(dx, []):
            for part in parts:
                for choice in itertools.product(*[ychoices[len(b)] for b in part]):
                    d = dx + sum(dy for dy, _ in choice)
                    blocks = tuple((b, c) for b, c in zip(part, choice))
                    labels.setdefault(d, []).append(((dx, xlab), blocks))
    if not labels:
        return None, None
    lo, hi = min(labels), max(labels)
    basis = {d: sorted(labels.get(d, []), key=repr) for d in range(lo, hi + 1)}
    index = {d: {b: i for i, b in enumerate(basis[d])} for d in basis}
    xidx = _label_index(xc)
    yidx = {k: _label_index(y.component(k)) for k in sizes}
    diff = {}
    for d in range(lo + 1, hi + 1):
        entries = {}

        def put(row, col, v):
            cur = entries.get((row, col))
            new = ring.add(cur, v) if cur is not None else v
            if ring.is_zero(new):
                entries.pop((row, col), None)
            else:
                entries[(row, col)] = new

        for col, ((dx, xlab), blocks) in enumerate(basis[d]):
            m = xc.diff.get(dx)
            if m is not None:
                j = xidx[dx][xlab]
                for i, v in m.column(j).items():
                    put(index[d - 1][((dx - 1, xc.basis[dx - 1][i]), blocks)], col, v)
            acc = dx
            for a, (block, (dy, ylab)) in enumerate(blocks):
                yc = y.component(len(block))
                m = yc.diff.get(dy)
                if m is not None:
                    sgn = ring.from_int((-1) ** acc)
                    j = yidx[len(block)][dy][ylab]
                    for i, v in m.column(j).items():
                        nb = blocks[:a] + ((block, (dy - 1, yc.basis[dy - 1][i])),) + blocks[a + 1:]
                        put(index[d - 1][((dx, xlab), nb)], col, ring.mul(sgn, v))
                acc += dy
        diff[d] = SparseMatrix(ring, len(basis[d - 1]), len(basis[d]), entries)
    action = {}
    for g in _sym(r).generators:
        inv = [0] * r
        for i, gi in enumerate(g):
            inv[gi] = i
        per = {}
        for d in range(lo, hi + 1):
            perm, signs = [], []
            for ((dx, xlab), blocks) in basis[d]:
                pa, sa = xc.full_action(g, dx)
                j = xidx[dx][xlab]
                sgn = sa[j] * koszul_reorder_sign([dy for _, (dy, _) in blocks], g)
                nb = tuple(blocks[inv[i]] for i in range(r))
                perm.append(index[d][((dx, xc.basis[dx][pa[j]]), nb)])
                signs.append(sgn)
            per[d] = (perm, signs)
        action[g] = per
    big = GComplex(ring, _sym(r), (lo, hi), basis, diff, action)
    return big, index


def _g_on_triple(y: SymSeq, yidx: dict, g, label):
    """Action of g in Sigma_n on a composition basis label: move the points,
    act within the blocks.  Returns (sign, new label)."""
    (dx, xlab), blocks = label
    sign = 1
    nb = []
    for (block, (dy, ylab)) in blocks:
        gb = tuple(sorted(g[p] for p in block))
        tau = _induced_block_perm(g, block)
        if tau:
            yc = y.component(len(block))
            perm, signs = yc.full_action(tau, dy)
            j = yidx[len(block)][dy][ylab]
            ylab, sign = yc.basis[dy][perm[j]], sign * signs[j]
        nb.append((gb, (dy, ylab)))
    return sign, ((dx, xlab), tuple(nb))


class _ArityPiece:
    """One (arity, inner arity) summand of a composition product."""

    def __init__(self, r, big, index, mode):
        self.r = r
        self.big = big
        self.index = index
        self.mode = mode
        if mode == "orbits":
            self.orbit = {d: _orbit_data(big, d) for d in big.degree_range()}
            self.kept = {}
            for d, (reps, _, _, clean) in self.orbit.items():
                kept = []
                for o in range(len(reps)):
                    if clean[o]:
                        kept.append(o)
                    elif big.ring.kind == "Z":
                        raise ShapeUnsupported(
                            "orbit meeting itself with sign -1 over Z is torsion")
                self.kept[d] = {o: k for k, o in enumerate(kept)}
            self.labels = {d: [big.basis[d][self.orbit[d][0][o]] for o in self.kept[d]]
                           for d in big.degree_range()}
        else:
            fixc, vecs = _fixed_points_data(big)
            self.fixc = fixc
            self.vecs = vecs
            self.labels = {d: [t for (_, t) in fixc.basis[d]] for d in big.degree_range()}

    def diff_entries(self, d):
        """Entries of the induced differential big-degree d -> d-1."""
        ring = self.big.ring
        if self.mode != "orbits":
            return self.fixc.diff[d].entries
        entries = {}
        reps_d = self.orbit[d][0]
        _, rep_of, sgn, _ = self.orbit[d - 1]
        for o, col in self.kept[d].items():
            img = self.big.diff[d].apply({reps_d[o]: ring.one()})
            for i, v in img.items():
                k = self.kept[d - 1].get(rep_of[i])
                if k is None:
                    continue
                t = ring.mul(ring.from_int(sgn[i]), v)
                cur = entries.get((k, col))
                new = ring.add(cur, t) if cur is not None else t
                if ring.is_zero(new):
                    entries.pop((k, col), None)
                else:
                    entries[(k, col)] = new
        return entries

    def locate(self, d, big_i):
        """Map a big basis index to (position, sign) in the quotient basis."""
        ring = self.big.ring
        if self.mode == "orbits":
            _, rep_of, sgn, _ = self.orbit[d]
            k = self.kept[d].get(rep_of[big_i])
            if k is None:
                return None, 0
            return k, sgn[big_i]
        raise ValueError("locate is an orbit-mode helper")

    def act(self, y, yidx, g, d, pos):
        """Image of quotient basis vector pos under g in Sigma_n: (position, sign)."""
        ring = self.big.ring
        if self.mode == "orbits":
            reps = self.orbit[d][0]
            kept_list = list(self.kept[d])
            i = reps[kept_list[pos]]
            s, lab = _g_on_triple(y, yidx, g, self.big.basis[d][i])
            k, s2 = self.locate(d, self.index[d][lab])
            return k, s * s2
        vec = self.vecs[d][pos]
        img = {}
        for i0, s0 in vec.items():
            sg, lab = _g_on_triple(y, yidx, g, self.big.basis[d][i0])
            j = self.index[d][lab]
            img[j] = img.get(j, 0) + sg * s0
        coords = _fixed_coords(ring, {j: ring.from_int(v) for j, v in img.items() if v},
                               self.vecs[d])
        (row, val), = coords.items()
        return row, _unit_int(ring, val)


def _compose_arity(x: SymSeq, y: SymSeq, n: int, mode: str):
    """All pieces of (x o y)(n) in the given mode, plus the assembled
    component.  Returns (component or None, pieces, offsets)."""
    ring = x.ring
    yidx = {k: _label_index(y.component(k)) for k in y.arities()}
    pieces = []
    for r in x.arities():
        big, index = _compose_big(x, y, n, r)
        if big is None:
            continue
        pieces.append(_ArityPiece(r, big, index, mode))
    if not pieces:
        return None, [], {}
    lo = min(p.big.d_min for p in pieces)
    hi = max(p.big.d_max for p in pieces)
    basis = {d: [] for d in range(lo, hi + 1)}
    offsets = {}
    for p in pieces:
        for d in range(lo, hi + 1):
            offsets[(p.r, d)] = len(basis[d])
            basis[d].extend(p.labels.get(d, []))
    diff = {}
    for d in range(lo + 1, hi + 1):
        entries = {}
        for p in pieces:
            if not (p.big.d_min < d <= p.big.d_max):
                continue
            ro, co = offsets[(p.r, d - 1)], offsets[(p.r, d)]
            for (i, j), v in p.diff_entries(d).items():
                entries[(ro + i, co + j)] = v
        diff[d] = SparseMatrix(ring, len(basis[d - 1]), len(basis[d]), entries)
    action = {}
    for g in _sym(n).generators:
        per = {}
        for d in range(lo, hi + 1):
            perm, signs = [0] * len(basis[d]), [1] * len(basis[d])
            for p in pieces:
                off = offsets[(p.r, d)]
                for pos in range(len(p.labels.get(d, []))):
                    k, s = p.act(y, yidx, g, d, pos)
                    perm[off + pos] = off + k
                    signs[off + pos] = s
            per[d] = (perm, signs)
        action[g] = per
    comp = GComplex(ring, _sym(n), (lo, hi), basis, diff, action)
    if all(comp.rank(d) == 0 for d in comp.degree_range()):
        return None, pieces, offsets
    return comp, pieces, offsets


def _sum_reachable(n: int, r: int, sizes: frozenset) -> bool:
    """Whether n is an ordered sum of r members of sizes (blocks of a
    composition summand); cheap overflow predicate, no groups built."""
    if r == 0:
        return n == 0
    return any(_sum_reachable(n - k, r - 1, sizes) for k in sizes if k <= n)


def compose(x: SymSeq, y: SymSeq, mode: str = "orbits",
            policy: TruncationPolicy | None = None) -> SymSeq:
    """Composition product: arity n assembled from X(r) (x) Y^{(x) r} over
    ordered partitions of n points, dividing by Sigma_r (mode 'orbits') or
    taking Sigma_r-invariants (mode 'invariants').

    With a nonzero arity-0 part of y, invariants mode demands an explicit
    policy: the untruncated object is a limit over all r at every arity.
    Arities beyond policy.r_max are never assembled; a combinatorial
    check decides whether dropping them is an overflow.
    """
    if x.ring != y.ring:
        raise RingMismatch("compose needs one ring")
    if mode not in ("orbits", "invariants"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "invariants" and y.component(0) is not None and policy is None:
        raise DivergenceGuard(
            "invariants mode with arity-0 operations needs a TruncationPolicy")
    comps = {}
    n_hi = x.r_max * max(y.arities() or [0])
    build_hi = n_hi if policy is None else min(n_hi, policy.r_max)
    for n in range(build_hi + 1):
        comp, _, _ = _compose_arity(x, y, n, mode)
        if comp is not None:
            comps[n] = comp
    beyond = False
    if build_hi < n_hi:
        sizes = frozenset(y.arities())
        beyond = any(_sum_reachable(n, r, sizes)
                     for n in range(build_hi + 1, n_hi + 1) for r in x.arities())
    if beyond and policy.on_overflow == "error":
        raise Overflow("result exceeds the truncation policy")
    out = SymSeq(x.ring, comps, r_max=max(comps) if comps else 0)
    out = _apply_policy(out, policy)
    out.truncated = out.truncated or beyond
    return out


class SymSeqMap:
    """An arity-indexed family of chain maps between symmetric sequences."""

    def __init__(self, source: SymSeq, target: SymSeq, components: dict):
        self.source = source
        self.target = target
        self.components = components  # arity -> ChainMap

    def component(self, r: int):
        return self.components.get(r)

    def __repr__(self):
        return f"SymSeqMap(arities {sorted(self.components)})"


def norm_map(x: SymSeq, y: SymSeq, policy: TruncationPolicy | None = None) -> SymSeqMap:
    """The arity-wise norm compose(x, y, orbits) -> compose(x, y, invariants),
    summing the Sigma_r-action over each orbit.  An isomorphism whenever the
    diagonal action is free, in particular when x is levelwise free or when
    y has no arity-0 part.

    The policy here only authorizes a nonzero arity-0 part of y (the same
    divergence concern as invariants-mode compose); the output itself is
    not truncated, or the map would not be one of complexes.
    """
    if x.ring != y.ring:
        raise RingMismatch("norm_map needs one ring")
    if y.component(0) is not None and policy is None:
        raise DivergenceGuard(
            "norm with arity-0 operations needs a TruncationPolicy")
    ring = x.ring
    n_hi = x.r_max * max(y.arities() or [0])
    if policy is not None:
        n_hi = min(n_hi, policy.r_max)
    src_comps, tgt_comps, maps = {}, {}, {}
    for n in range(n_hi + 1):
        comp_o, pieces_o, off_o = _compose_arity(x, y, n, "orbits")
        comp_i, pieces_i, off_i = _compose_arity(x, y, n, "invariants")
        if comp_o is None or comp_i is None:
            continue
        src_comps[n], tgt_comps[n] = comp_o, comp_i
        inv_by_r = {p.r: p for p in pieces_i}
        comps = {}
        for d in comp_o.degree_range():
            entries = {}
            for p in pieces_o:
                q = inv_by_r[p.r]
                if d < p.big.d_min or d > p.big.d_max:
                    continue
                reps = p.orbit[d][0]
                kept_list = list(p.kept[d])
                for col in range(len(p.labels.get(d, []))):
                    i = reps[kept_list[col]]
                    vec = {}
                    for g in p.big.group.elements:
                        perm, signs = p.big.full_action(g, d)
                        j = perm[i]
                        vec[j] = vec.get(j, 0) + signs[i]
                    vec = {j: ring.from_int(v) for j, v in vec.items() if v}
                    for row, val in _fixed_coords(ring, vec, q.vecs[d]).items():
                        entries[(off_i[(p.r, d)] + row, off_o[(p.r, d)] + col)] = val
            comps[d] = SparseMatrix(ring, comp_i.rank(d), comp_o.rank(d), entries)
        maps[n] = ChainMap(comp_o, comp_i, comps)
    src = SymSeq(ring, src_comps, r_max=max(src_comps) if src_comps else 0)
    tgt = SymSeq(ring, tgt_comps, r_max=max(tgt_comps) if tgt_comps else 0)
    return SymSeqMap(src, tgt, maps)


# ---------------------------------------------------------------------------
# interchange of composition against the levelwise tensor


def interchange(a: SymSeq, b: SymSeq, c: SymSeq, d: SymSeq) -> SymSeqMap:
    """The canonical map (a o b) (x)_lev (c o d) -> (a (x)_lev c) o (b (x)_lev d).

    A pair of orbit classes maps to the sum over realignments of the second
    partition onto the first; mismatched partitions die.  Koszul signs move
    the c factor past the b blocks and interleave the d blocks with them.
    """
    src = lev_tensor(compose(a, b), compose(c, d))
    ac = lev_tensor(a, c)
    bd = lev_tensor(b, d)
    tgt = compose(ac, bd)
    ring = a.ring
    maps = {}
    for n in src.arities():
        sc = src.component(n)
        tc = tgt.component(n)
        bigs_cd = {}
        idx_cd = {}
        for r in c.arities():
            big, index = _compose_big(c, d, n, r)
            if big is not None:
                bigs_cd[r], idx_cd[r] = big, index
        _, pieces_t, off_t = _compose_arity(ac, bd, n, "orbits")
        piece_by_r = {p.r: p for p in pieces_t}
        comps = {}
        for deg in sc.degree_range():
            entries = {}
            for col, ((du, ulab), (dv, vlab)) in enumerate(sc.basis.get(deg, [])):
                (da, alab), ublocks = ulab
                (dc0, clab), vblocks = vlab
                r, s = len(ublocks), len(vblocks)
                if r != s or s not in bigs_cd:
                    continue
                bigcd, cdindex = bigs_cd[s], idx_cd[s]
                i_v = cdindex[dv][vlab]
                ub_sets = tuple(blk for blk, _ in ublocks)
                for tau in _sym(s).elements:
                    perm, signs = bigcd.full_action(tau, dv)
                    j = perm[i_v]
                    (dc, clab2), vb = bigcd.basis[dv][j]
                    if tuple(blk for blk, _ in vb) != ub_sets:
                        continue
                    bdegs = [dy for _, (dy, _) in ublocks]
                    ddegs = [dy for _, (dy, _) in vb]
                    sgn = signs[i_v] * ((-1) ** (dc * sum(bdegs)))
                    for jj in range(s):
                        sgn *= (-1) ** (ddegs[jj] * sum(bdegs[jj + 1:]))
                    tb = tuple((blk, (ublocks[k][1][0] + ddegs[k],
                                      (ublocks[k][1], vb[k][1])))
                               for k, blk in enumerate(ub_sets))
                    tlab = ((da + dc, ((da, alab), (dc, clab2))), tb)
                    p = piece_by_r.get(r)
                    if p is None:
                        continue
                    k, s2 = p.locate(deg, p.index[deg][tlab])
                    if k is None:
                        continue
                    row = off_t[(r, deg)] + k
                    cur = entries.get((row, col), ring.zero())
                    new = ring.add(cur, ring.from_int(sgn * s2))
                    if ring.is_zero(new):
                        entries.pop((row, col), None)
                    else:
                        entries[(row, col)] = new
            comps[deg] = SparseMatrix(ring, tc.rank(deg) if tc else 0,
                                      sc.rank(deg), entries)
        if tc is None:
            continue
        maps[n] = ChainMap(sc, tc, comps)
    return SymSeqMap(src, tgt, maps)


# ---------------------------------------------------------------------------
# truncation


def _truncate_complex(c: GComplex, lo: int, hi: int):
    nlo, nhi = max(c.d_min, lo), min(c.d_max, hi)
    if nlo > nhi:
        return None
    basis = {d: c.basis.get(d, []) for d in range(nlo, nhi + 1)}
    diff = {d: c.diff[d] for d in range(nlo + 1, nhi + 1)}
    action = {g: {d: per[d] for d in range(nlo, nhi + 1)} for g, per in c.action.items()}
    out = GComplex(c.ring, c.group, (nlo, nhi), basis, diff, action, validate=False)
    if all(out.rank(d) == 0 for d in out.degree_range()):
        return None
    return out


def _apply_policy(seq: SymSeq, policy: TruncationPolicy | None) -> SymSeq:
    if policy is None:
        return seq
    overflow = False
    keep = {}
    for r, c in seq.components.items():
        if r > policy.r_max:
            overflow = True
            continue
        if any(c.rank(d) for d in c.degree_range()
               if d < policy.d_min or d > policy.d_max):
            overflow = True
        tc = _truncate_complex(c, policy.d_min, policy.d_max)
        if tc is not None:
            keep[r] = tc
    if overflow and policy.on_overflow == "error":
        raise Overflow("result exceeds the truncation policy")
    return SymSeq(seq.ring, keep, r_max=policy.r_max,
                  window=(policy.d_min, policy.d_max),
                  truncated=seq.truncated or overflow)
