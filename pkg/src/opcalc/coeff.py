"""Exact coefficient arithmetic and sparse linear algebra.

Everything downstream (chain complexes, operads, homology) runs on the
three coefficient rings implemented here: the integers, the rationals and
prime fields.  All arithmetic is exact; there is no floating point and no
probabilistic shortcut anywhere in the package.

Values are stored raw (int for Z and F_p, Fraction for Q) and interpreted
through a Ring descriptor.  The Scalar wrapper exists for callers who want
operator syntax; the hot paths work on raw values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from math import gcd


class OpcalcError(Exception):
    """Base class for all structured errors raised by this package."""


class NotAField(OpcalcError):
    """Raised when a field-only routine is handed the integers."""


def _is_prime(p: int) -> bool:
    if p < 2:
        return False
    if p % 2 == 0:
        return p == 2
    f = 3
    while f * f <= p:
        if p % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class Ring:
    """Descriptor for Z, Q or F_p.  kind is one of 'Z', 'Q', 'Fp'."""

    kind: str
    p: int | None = None

    def __post_init__(self):
        if self.kind not in ("Z", "Q", "Fp"):
            raise ValueError(f"unknown ring kind {self.kind!r}")
        if self.kind == "Fp":
            if self.p is None or not _is_prime(self.p):
                raise ValueError(f"F_p needs a prime p, got {self.p!r}")
        elif self.p is not None:
            raise ValueError("p is only meaningful for PrimeField")

    @staticmethod
    def integers() -> "Ring":
        return Ring("Z")

    @staticmethod
    def rationals() -> "Ring":
        return Ring("Q")

    @staticmethod
    def prime_field(p: int) -> "Ring":
        return Ring("Fp", p)

    @property
    def is_field(self) -> bool:
        return self.kind != "Z"

    @property
    def characteristic(self) -> int:
        return self.p if self.kind == "Fp" else 0

    # raw-value arithmetic -------------------------------------------------

    def from_int(self, n: int):
        if self.kind == "Z":
            return n
        if self.kind == "Q":
            return Fraction(n)
        return n % self.p

    def zero(self):
        return self.from_int(0)

    def one(self):
        return self.from_int(1)

    def add(self, a, b):
        if self.kind == "Fp":
            return (a + b) % self.p
        return a + b

    def sub(self, a, b):
        if self.kind == "Fp":
            return (a - b) % self.p
        return a - b

    def neg(self, a):
        if self.kind == "Fp":
            return (-a) % self.p
        return -a

    def mul(self, a, b):
        if self.kind == "Fp":
            return (a * b) % self.p
        return a * b

    def invert(self, a):
        if a == 0:
            raise ZeroDivisionError("inverting zero")
        if self.kind == "Z":
            if a in (1, -1):
                return a
            raise NotAField(f"{a} is not a unit in Z")
        if self.kind == "Q":
            return Fraction(1) / a
        return pow(a, self.p - 2, self.p)

    def divide(self, a, b):
        return self.mul(a, self.invert(b))

    def is_zero(self, a) -> bool:
        return a == 0 if self.kind != "Fp" else a % self.p == 0

    # serialization --------------------------------------------------------

    def value_to_string(self, a) -> str:
        if self.kind == "Q":
            a = Fraction(a)
            if a.denominator == 1:
                return str(a.numerator)
            return f"{a.numerator}/{a.denominator}"
        return str(a)

    def value_from_string(self, s: str):
        if self.kind == "Q":
            if "/" in s:
                num, den = s.split("/")
                return Fraction(int(num), int(den))
            return Fraction(int(s))
        return self.from_int(int(s))

    def to_json_obj(self):
        if self.kind == "Fp":
            return {"kind": "Fp", "p": self.p}
        return {"kind": self.kind}

    @staticmethod
    def from_json_obj(obj) -> "Ring":
        if obj["kind"] == "Fp":
            return Ring.prime_field(obj["p"])
        return Ring(obj["kind"])

    def __str__(self):
        return {"Z": "Z", "Q": "Q"}.get(self.kind, f"F_{self.p}")


ZZ = Ring.integers()
QQ = Ring.rationals()


@dataclass(frozen=True)
class Scalar:
    """A single exact ring element, for callers who want operator syntax."""

    ring: Ring
    value: object

    @staticmethod
    def of(ring: Ring, n: int) -> "Scalar":
        return Scalar(ring, ring.from_int(n))

    def _check(self, other: "Scalar"):
        if self.ring != other.ring:
            raise ValueError("scalars from different rings")

    def __add__(self, other):
        self._check(other)
        return Scalar(self.ring, self.ring.add(self.value, other.value))

    def __sub__(self, other):
        self._check(other)
        return Scalar(self.ring, self.ring.sub(self.value, other.value))

    def __neg__(self):
        return Scalar(self.ring, self.ring.neg(self.value))

    def __mul__(self, other):
        self._check(other)
        return Scalar(self.ring, self.ring.mul(self.value, other.value))

    def __truediv__(self, other):
        self._check(other)
        return Scalar(self.ring, self.ring.divide(self.value, other.value))

    def is_zero(self) -> bool:
        return self.ring.is_zero(self.value)

    def __str__(self):
        return self.ring.value_to_string(self.value)


class LinComb:
    """Finite formal linear combination of hashable labels with raw ring values.

    The universal element type: operad elements, chains, cochains are all
    LinCombs over an appropriate label alphabet.  Zero coefficients are
    never stored.
    """

    __slots__ = ("ring", "terms")

    def __init__(self, ring: Ring, terms=None):
        self.ring = ring
        self.terms = {}
        if terms:
            for label, c in (terms.items() if isinstance(terms, dict) else terms):
                self.iadd(label, c)

    @staticmethod
    def basis(ring: Ring, label) -> "LinComb":
        lc = LinComb(ring)
        lc.terms[label] = ring.one()
        return lc

    @staticmethod
    def zero(ring: Ring) -> "LinComb":
        return LinComb(ring)

    def iadd(self, label, coeff) -> "LinComb":
        """In-place add coeff * label.  Returns self for chaining."""
        cur = self.terms.get(label)
        if cur is None:
            if not self.ring.is_zero(coeff):
                self.terms[label] = coeff
        else:
            new = self.ring.add(cur, coeff)
            if self.ring.is_zero(new):
                del self.terms[label]
            else:
                self.terms[label] = new
        return self

    def __add__(self, other: "LinComb") -> "LinComb":
        out = self.copy()
        for label, c in other.terms.items():
            out.iadd(label, c)
        return out

    def __sub__(self, other: "LinComb") -> "LinComb":
        out = self.copy()
        for label, c in other.terms.items():
            out.iadd(label, self.ring.neg(c))
        return out

    def __neg__(self) -> "LinComb":
        return LinComb(self.ring, [(l, self.ring.neg(c)) for l, c in self.terms.items()])

    def scale(self, coeff) -> "LinComb":
        if self.ring.is_zero(coeff):
            return LinComb(self.ring)
        return LinComb(self.ring, [(l, self.ring.mul(coeff, c)) for l, c in self.terms.items()])

    def copy(self) -> "LinComb":
        out = LinComb(self.ring)
        out.terms = dict(self.terms)
        return out

    def map_terms(self, fn) -> "LinComb":
        """Linear extension: fn(label) must return a LinComb."""
        out = LinComb(self.ring)
        for label, c in self.terms.items():
            img = fn(label)
            for l2, c2 in img.terms.items():
                out.iadd(l2, self.ring.mul(c, c2))
        return out

    def is_zero(self) -> bool:
        return not self.terms

    def items(self):
        return self.terms.items()

    def coeff(self, label):
        return self.terms.get(label, self.ring.zero())

    def __eq__(self, other):
        return isinstance(other, LinComb) and self.ring == other.ring and self.terms == other.terms

    def __repr__(self):
        if not self.terms:
            return "0"
        bits = []
        for label, c in sorted(self.terms.items(), key=lambda kv: repr(kv[0])):
            bits.append(f"{self.ring.value_to_string(c)}*{label!r}")
        return " + ".join(bits)


class SparseMatrix:
    """Immutable-by-convention sparse matrix over a Ring.

    entries maps (row, col) to a nonzero raw value.  All differential and
    structure-constant matrices in the package are SparseMatrix instances.
    """

    __slots__ = ("ring", "rows", "cols", "entries")

    def __init__(self, ring: Ring, rows: int, cols: int, entries=None):
        if rows < 0 or cols < 0:
            raise ValueError("negative dimensions")
        self.ring = ring
        self.rows = rows
        self.cols = cols
        self.entries = {}
        if entries:
            items = entries.items() if isinstance(entries, dict) else entries
            for (r, c), v in items:
                if not (0 <= r < rows and 0 <= c < cols):
                    raise ValueError(f"index ({r},{c}) out of range {rows}x{cols}")
                if not ring.is_zero(v):
                    self.entries[(r, c)] = v

    @staticmethod
    def identity(ring: Ring, n: int) -> "SparseMatrix":
        return SparseMatrix(ring, n, n, {(i, i): ring.one() for i in range(n)})

    @staticmethod
    def from_dense(ring: Ring, rows_list) -> "SparseMatrix":
        rows = len(rows_list)
        cols = len(rows_list[0]) if rows else 0
        entries = {}
        for i, row in enumerate(rows_list):
            if len(row) != cols:
                raise ValueError("ragged rows")
            for j, v in enumerate(row):
                v = ring.from_int(v) if isinstance(v, int) else v
                if not ring.is_zero(v):
                    entries[(i, j)] = v
        return SparseMatrix(ring, rows, cols, entries)

    def get(self, r: int, c: int):
        return self.entries.get((r, c), self.ring.zero())

    def column(self, c: int) -> dict:
        return {r: v for (r, cc), v in self.entries.items() if cc == c}

    def columns(self) -> list[dict]:
        """All columns as row->value dicts (one pass over entries)."""
        cols = [dict() for _ in range(self.cols)]
        for (r, c), v in self.entries.items():
            cols[c][r] = v
        return cols

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix(self.ring, self.cols, self.rows,
                            {(c, r): v for (r, c), v in self.entries.items()})

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        self._compat(other)
        entries = dict(self.entries)
        ring = self.ring
        for key, v in other.entries.items():
            cur = entries.get(key)
            new = ring.add(cur, v) if cur is not None else v
            if ring.is_zero(new):
                entries.pop(key, None)
            else:
                entries[key] = new
        return SparseMatrix(ring, self.rows, self.cols, entries)

    def __sub__(self, other: "SparseMatrix") -> "SparseMatrix":
        return self + other.scale(self.ring.from_int(-1))

    def scale(self, coeff) -> "SparseMatrix":
        ring = self.ring
        return SparseMatrix(ring, self.rows, self.cols,
                            {k: ring.mul(coeff, v) for k, v in self.entries.items()
                             if not ring.is_zero(ring.mul(coeff, v))})

    def matmul(self, other: "SparseMatrix") -> "SparseMatrix":
        if self.cols != other.rows:
            raise ValueError(f"shape mismatch {self.rows}x{self.cols} @ {other.rows}x{other.cols}")
        if self.ring != other.ring:
            raise ValueError("ring mismatch in matmul")
        ring = self.ring
        # rows of self, grouped once
        left_rows: dict[int, dict[int, object]] = {}
        for (r, c), v in self.entries.items():
            left_rows.setdefault(c, {})[r] = v  # keyed by c: which rows of self see row c of other
        out: dict[tuple[int, int], object] = {}
        for (r, c), v in other.entries.items():
            hits = left_rows.get(r)
            if not hits:
                continue
            for rr, vv in hits.items():
                key = (rr, c)
                cur = out.get(key)
                term = ring.mul(vv, v)
                new = ring.add(cur, term) if cur is not None else term
                if ring.is_zero(new):
                    out.pop(key, None)
                else:
                    out[key] = new
        return SparseMatrix(ring, self.rows, other.cols, out)

    def apply(self, vec: dict) -> dict:
        """Matrix times sparse column vector (dict col->value)."""
        ring = self.ring
        out: dict[int, object] = {}
        for (r, c), v in self.entries.items():
            x = vec.get(c)
            if x is None:
                continue
            cur = out.get(r)
            term = ring.mul(v, x)
            new = ring.add(cur, term) if cur is not None else term
            if ring.is_zero(new):
                out.pop(r, None)
            else:
                out[r] = new
        return out

    def is_zero(self) -> bool:
        return not self.entries

    def _compat(self, other: "SparseMatrix"):
        if self.ring != other.ring:
            raise ValueError("ring mismatch")
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ValueError("shape mismatch")

    def __eq__(self, other):
        return (isinstance(other, SparseMatrix) and self.ring == other.ring
                and self.rows == other.rows and self.cols == other.cols
                and self.entries == other.entries)

    def change_ring(self, ring: Ring) -> "SparseMatrix":
        """Base change: push integer/rational entries into another ring."""
        out = {}
        for k, v in self.entries.items():
            if isinstance(v, Fraction):
                if ring.kind == "Fp":
                    w = ring.mul(ring.from_int(v.numerator), ring.invert(ring.from_int(v.denominator)))
                elif ring.kind == "Z":
                    if v.denominator != 1:
                        raise ValueError("non-integral value in base change to Z")
                    w = v.numerator
                else:
                    w = v
            else:
                w = ring.from_int(v)
            if not ring.is_zero(w):
                out[k] = w
        return SparseMatrix(ring, self.rows, self.cols, out)

    # serialization: {rows, cols, entries: [[r, c, "num"], ...]}

    def to_json_obj(self, with_ring: bool = False):
        triples = [[r, c, self.ring.value_to_string(v)]
                   for (r, c), v in sorted(self.entries.items())]
        obj = {"rows": self.rows, "cols": self.cols, "entries": triples}
        if with_ring:
            obj["ring"] = self.ring.to_json_obj()
        return obj

    @staticmethod
    def from_json_obj(obj, ring: Ring | None = None) -> "SparseMatrix":
        if ring is None:
            ring = Ring.from_json_obj(obj["ring"])
        entries = {}
        for r, c, s in obj["entries"]:
            entries[(r, c)] = ring.value_from_string(s)
        return SparseMatrix(ring, obj["rows"], obj["cols"], entries)

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(with_ring=True), sort_keys=True)

    def __repr__(self):
        return f"SparseMatrix({self.ring}, {self.rows}x{self.cols}, nnz={len(self.entries)})"


# ---------------------------------------------------------------------------
# Smith normal form over Z


def smith_normal_form(m: SparseMatrix) -> tuple[list[int], int]:
    """Invariant factors d_1 | d_2 | ... | d_k (all positive) and the rank.

    Unimodular transforms are not tracked.  Pivoting always picks a
    minimal-absolute-value entry, which keeps coefficient growth tame on
    the near-unimodular sparse matrices this package produces.
    """
    if m.ring.kind != "Z":
        raise ValueError("smith_normal_form needs integer entries")
    # mutable dict-of-dicts, both orientations kept in sync
    rows: dict[int, dict[int, int]] = {}
    cols: dict[int, dict[int, int]] = {}
    for (r, c), v in m.entries.items():
        rows.setdefault(r, {})[c] = v
        cols.setdefault(c, {})[r] = v

    def set_entry(r, c, v):
        if v == 0:
            rw = rows.get(r)
            if rw is not None and c in rw:
                del rw[c]
                if not rw:
                    del rows[r]
            cl = cols.get(c)
            if cl is not None and r in cl:
                del cl[r]
                if not cl:
                    del cols[c]
        else:
            rows.setdefault(r, {})[c] = v
            cols.setdefault(c, {})[r] = v

    def add_row(dst, src, q):
        # row_dst += q * row_src
        if q == 0:
            return
        for c, v in list(rows.get(src, {}).items()):
            set_entry(dst, c, rows.get(dst, {}).get(c, 0) + q * v)

    def add_col(dst, src, q):
        if q == 0:
            return
        for r, v in list(cols.get(src, {}).items()):
            set_entry(r, dst, rows.get(r, {}).get(dst, 0) + q * v)

    diag: list[int] = []
    while rows:
        # minimal absolute value pivot
        best = None
        for r, rw in rows.items():
            for c, v in rw.items():
                a = v if v > 0 else -v
                if best is None or a < best[0]:
                    best = (a, r, c)
                    if a == 1:
                        break
            if best is not None and best[0] == 1:
                break
        _, pr, pc = best
        # clear the pivot row and column by Euclidean steps
        while True:
            pv = rows[pr][pc]
            moved = False
            for r in list(cols.get(pc, {}).keys()):
                if r == pr:
                    continue
                v = cols[pc][r]
                q = v // pv
                add_row(r, pr, -q)
                rem = rows.get(r, {}).get(pc, 0)
                if rem != 0:
                    # remainder is strictly smaller; make it the new pivot
                    pr = r
                    moved = True
                    break
            if moved:
                continue
            pv = rows[pr][pc]
            for c in list(rows.get(pr, {}).keys()):
                if c == pc:
                    continue
                v = rows[pr][c]
                q = v // pv
                add_col(c, pc, -q)
                rem = rows.get(pr, {}).get(c, 0)
                if rem != 0:
                    pc = c
                    moved = True
                    break
            if moved:
                continue
            break
        diag.append(abs(rows[pr][pc]))
        set_entry(pr, pc, 0)

    # normalize to divisibility chain: replacing pairs by (gcd, lcm)
    # preserves all products of k smallest p-valuations
    changed = True
    while changed:
        changed = False
        for i in range(len(diag)):
            for j in range(i + 1, len(diag)):
                a, b = diag[i], diag[j]
                if b % a != 0:
                    g = gcd(a, b)
                    diag[i], diag[j] = g, a * b // g
                    changed = True
    diag.sort()
    return diag, len(diag)


# ---------------------------------------------------------------------------
# Field elimination


def row_reduce(m: SparseMatrix) -> tuple[int, list[dict]]:
    """Exact rank and kernel basis over Q or F_p.

    Kernel vectors are returned as sparse dicts col->value.  Rejects the
    integers; use smith_normal_form there.
    """
    if not m.ring.is_field:
        raise NotAField("row_reduce needs a field; use smith_normal_form over Z")
    if m.ring.kind == "Fp" and m.ring.p == 2:
        return _row_reduce_gf2(m)
    ring = m.ring
    cols = m.columns()
    # tracker[i] records the column-op history so zeroed columns give kernel vectors
    trackers = [{j: ring.one()} for j in range(m.cols)]
    pivot_of_row: dict[int, int] = {}  # row -> column index holding its pivot
    rank = 0
    kernel = []
    for j in range(m.cols):
        col = cols[j]
        # eliminate with existing pivots
        while True:
            hit = None
            for r in col:
                if r in pivot_of_row:
                    hit = r
                    break
            if hit is None:
                break
            pj = pivot_of_row[hit]
            factor = ring.neg(ring.divide(col[hit], cols[pj][hit]))
            _axpy(ring, col, cols[pj], factor)
            _axpy(ring, trackers[j], trackers[pj], factor)
        if col:
            # fresh pivot: first nonzero row
            pr = min(col)
            pivot_of_row[pr] = j
            rank += 1
        else:
            kernel.append(dict(trackers[j]))
    return rank, kernel


def _axpy(ring: Ring, dst: dict, src: dict, factor):
    for k, v in src.items():
        cur = dst.get(k)
        term = ring.mul(factor, v)
        new = ring.add(cur, term) if cur is not None else term
        if ring.is_zero(new):
            dst.pop(k, None)
        else:
            dst[k] = new


def _row_reduce_gf2(m: SparseMatrix) -> tuple[int, list[dict]]:
    """Bitset elimination over F_2: columns and trackers are int bitmasks."""
    ncols = m.cols
    cols = [0] * ncols
    for (r, c), v in m.entries.items():
        if v % 2:
            cols[c] |= 1 << r
    trackers = [1 << j for j in range(ncols)]
    pivots: dict[int, int] = {}  # lowest-set-bit row -> column index
    rank = 0
    kernel = []
    for j in range(ncols):
        col = cols[j]
        while col:
            low = col & -col
            pj = pivots.get(low)
            if pj is None:
                break
            col ^= cols[pj]
            trackers[j] ^= trackers[pj]
        cols[j] = col
        if col:
            pivots[col & -col] = j
            rank += 1
        else:
            vec = trackers[j]
            kernel.append({k: 1 for k in _bit_positions(vec)})
    return rank, kernel


def _bit_positions(mask: int):
    pos = 0
    while mask:
        if mask & 1:
            yield pos
        mask >>= 1
        pos += 1


def field_rank(m: SparseMatrix) -> int:
    return row_reduce(m)[0]


def integer_kernel(m: SparseMatrix) -> list[dict]:
    """Basis of the kernel of an integer matrix, as sparse dicts.

    Column elimination on the stacked matrix [A; I]: columns whose A-part
    is reduced to zero have kernel vectors in the I-part.  The result is a
    basis of the (saturated) kernel lattice.
    """
    if m.ring.kind != "Z":
        raise ValueError("integer_kernel needs integer entries")
    cols = m.columns()
    trackers = [{j: 1} for j in range(m.cols)]
    live = list(range(m.cols))
    # Euclidean column elimination, one pivot row at a time
    for r in range(m.rows):
        with_r = [j for j in live if r in cols[j] and cols[j][r] != 0]
        if not with_r:
            continue
        while len(with_r) > 1:
            with_r.sort(key=lambda j: abs(cols[j][r]))
            j0 = with_r[0]
            pv = cols[j0][r]
            rest = []
            for j in with_r[1:]:
                q = cols[j][r] // pv
                _axpy_int(cols[j], cols[j0], -q)
                _axpy_int(trackers[j], trackers[j0], -q)
                if cols[j].get(r, 0) != 0:
                    rest.append(j)
            with_r = [j0] + rest
        live.remove(with_r[0])
    return [trackers[j] for j in live]


def _axpy_int(dst: dict, src: dict, q: int):
    if q == 0:
        return
    for k, v in src.items():
        new = dst.get(k, 0) + q * v
        if new == 0:
            dst.pop(k, None)
        else:
            dst[k] = new
