"""Cyclic rotation groups C_n, SO(2), and their representations.

Angles of C_n elements are kept as exact fractions of a full turn so that
composed rotations never drift; floats appear only when a matrix is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

TWO_PI = 2.0 * math.pi


class GroupError(ValueError):
    pass


@dataclass(frozen=True)
class GroupElement:
    """A rotation in C_n (``order >= 1``) or in SO(2) (``order == 0``)."""

    order: int
    index: int = 0
    radians: float = 0.0

    def __post_init__(self):
        if self.order < 0:
            raise GroupError(f"group order must be >= 0, got {self.order}")
        if self.order > 0:
            object.__setattr__(self, "index", self.index % self.order)
            object.__setattr__(self, "radians", 0.0)
        else:
            object.__setattr__(self, "index", 0)
            object.__setattr__(self, "radians", float(self.radians) % TWO_PI)

    @property
    def is_continuous(self) -> bool:
        return self.order == 0

    @property
    def turns(self) -> Fraction | None:
        """Exact fraction of a full turn, or None for a continuous element."""
        if self.order == 0:
            return None
        return Fraction(self.index, self.order)

    @property
    def angle(self) -> float:
        if self.order == 0:
            return self.radians
        return TWO_PI * self.index / self.order

    def quarter_turns(self) -> int | None:
        """Number of quarter turns if the element is a multiple of pi/2."""
        t = self.turns
        if t is None:
            q = self.radians / (math.pi / 2)
            return int(round(q)) % 4 if abs(q - round(q)) < 1e-12 else None
        q = t * 4
        return int(q) % 4 if q.denominator == 1 else None

    def lies_in(self, n: int) -> bool:
        """True if this rotation is (exactly) an element of C_n."""
        if n == 0:
            return True
        t = self.turns
        if t is None:
            return False
        return (t * n).denominator == 1

    def index_in(self, n: int) -> int:
        """Index of this rotation inside C_n; raises if it is not a member."""
        if not self.lies_in(n) or n == 0:
            raise GroupError(f"{self} is not an element of C_{n}")
        return int(self.turns * n) % n

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return compose(self, other)

    def __repr__(self):
        if self.order == 0:
            return f"SO2({self.radians:.6g})"
        return f"C{self.order}[{self.index}]"


def rotation(n: int, i: int = 0) -> GroupElement:
    if n <= 0:
        raise GroupError("C_n needs n >= 1")
    return GroupElement(n, i)


def so2(angle: float) -> GroupElement:
    return GroupElement(0, radians=angle)


def identity(n: int) -> GroupElement:
    return GroupElement(n, 0) if n > 0 else so2(0.0)


def elements(n: int) -> list[GroupElement]:
    return [GroupElement(n, i) for i in range(n)]


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    if g.order != h.order:
        raise GroupError(f"cannot compose elements of different groups: {g!r}, {h!r}")
    if g.order == 0:
        return so2(g.radians + h.radians)
    return GroupElement(g.order, g.index + h.index)


def inverse(g: GroupElement) -> GroupElement:
    if g.order == 0:
        return so2(-g.radians)
    return GroupElement(g.order, -g.index)


def cos_sin(g: GroupElement, frequency: int = 1) -> tuple[float, float]:
    """cos/sin of ``frequency * angle(g)``, exact (0, +-1) at quarter turns."""
    t = g.turns
    if t is not None:
        ft = (t * frequency) % 1
        exact = {Fraction(0): (1.0, 0.0), Fraction(1, 4): (0.0, 1.0),
                 Fraction(1, 2): (-1.0, 0.0), Fraction(3, 4): (0.0, -1.0)}
        if ft in exact:
            return exact[ft]
        a = TWO_PI * float(ft)
    else:
        a = frequency * g.radians
    return math.cos(a), math.sin(a)


# ---------------------------------------------------------------------------
# representations

KINDS = ("trivial", "standard", "regular", "quotient", "irrep")


@dataclass(frozen=True)
class Representation:
    kind: str
    group_order: int
    k: int = 1           # quotient subgroup order
    frequency: int = 0   # irrep frequency

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GroupError(f"unknown representation kind {self.kind!r}")
        if self.kind in ("regular", "quotient"):
            if self.group_order <= 0:
                raise GroupError(f"{self.kind} representation is undefined for SO(2)")
        if self.kind == "quotient":
            if self.k <= 0 or self.group_order % self.k:
                raise GroupError(f"quotient C_{self.group_order}/C_{self.k}: k must divide n")
        if self.kind == "irrep" and self.frequency < 0:
            raise GroupError("irrep frequency must be >= 0")

    @property
    def dim(self) -> int:
        if self.kind == "trivial":
            return 1
        if self.kind == "standard":
            return 2
        if self.kind == "regular":
            return self.group_order
        if self.kind == "quotient":
            return self.group_order // self.k
        return 1 if self.frequency == 0 else 2

    @property
    def is_permutation(self) -> bool:
        return self.kind in ("trivial", "regular", "quotient") or (
            self.kind == "irrep" and self.frequency == 0)

    def __str__(self):
        if self.kind == "quotient":
            return f"quotient(C{self.group_order}/C{self.k})"
        if self.kind == "irrep":
            return f"irrep{self.frequency}(C{self.group_order})"
        return f"{self.kind}(C{self.group_order})"


def trivial(n: int = 0) -> Representation:
    return Representation("trivial", n)


def standard(n: int = 0) -> Representation:
    return Representation("standard", n)


def regular(n: int) -> Representation:
    return Representation("regular", n)


def quotient(n: int, k: int) -> Representation:
    return Representation("quotient", n, k=k)


def irrep(n: int, m: int) -> Representation:
    return Representation("irrep", n, frequency=m)


def _shift_matrix(size: int, shift: int) -> np.ndarray:
    # (P x)_j = x_{j - shift}: coordinates move forward by `shift`
    P = np.zeros((size, size))
    idx = np.arange(size)
    P[(idx + shift) % size, idx] = 1.0
    return P


def rep_matrix(rep: Representation, g: GroupElement) -> np.ndarray:
    """Matrix of ``g`` under ``rep``.

    ``g`` may come from any C_m whose elements lie in the representation's
    group (e.g. a C_12 element acting on a C_36 quotient field).
    """
    if rep.kind == "trivial" or (rep.kind == "irrep" and rep.frequency == 0):
        return np.ones((1, 1))
    if rep.kind in ("standard", "irrep"):
        if g.order and rep.group_order and not g.lies_in(rep.group_order):
            raise GroupError(f"{g!r} is not in C_{rep.group_order}")
        c, s = cos_sin(g, 1 if rep.kind == "standard" else rep.frequency)
        return np.array([[c, -s], [s, c]])
    if g.is_continuous:
        raise GroupError(f"{rep.kind} representation is undefined for continuous rotations")
    i = g.index_in(rep.group_order)
    return _shift_matrix(rep.dim, i)


@dataclass(frozen=True)
class FieldType:
    """Direct sum of representations describing one fiber."""

    reps: tuple[Representation, ...]

    @classmethod
    def of(cls, rep: Representation, copies: int = 1) -> "FieldType":
        return cls((rep,) * copies)

    @property
    def dim(self) -> int:
        return sum(r.dim for r in self.reps)

    @property
    def copies(self) -> int:
        return len(self.reps)

    @property
    def is_trivial(self) -> bool:
        return all(r.dim == 1 and r.is_permutation for r in self.reps)

    def matrix(self, g: GroupElement) -> np.ndarray:
        M = np.zeros((self.dim, self.dim))
        o = 0
        for r in self.reps:
            d = r.dim
            M[o:o + d, o:o + d] = rep_matrix(r, g)
            o += d
        return M

    def __add__(self, other: "FieldType") -> "FieldType":
        return FieldType(self.reps + other.reps)

    def __str__(self):
        if len(set(self.reps)) == 1:
            return f"{len(self.reps)}x{self.reps[0]}"
        return "+".join(str(r) for r in self.reps)


# ---------------------------------------------------------------------------
# orientation distributions


@dataclass(frozen=True)
class OrientationDistribution:
    values: np.ndarray
    period: float = TWO_PI

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("orientation values must be a finite 1-D array")
        object.__setattr__(self, "values", v)

    @property
    def bins(self) -> int:
        return len(self.values)

    def angles(self) -> np.ndarray:
        return np.arange(self.bins) * self.period / self.bins

    def normalized(self) -> "OrientationDistribution":
        v = np.clip(self.values, 0, None)
        return OrientationDistribution(v / v.sum(), self.period)

    def __eq__(self, other):
        return (isinstance(other, OrientationDistribution) and self.period == other.period
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.period, self.values.tobytes()))


class IncommensurateAngle(GroupError):
    def __init__(self, angle: float, nearest: float):
        super().__init__(f"angle {angle:.6g} is not a multiple of the bin width; "
                         f"nearest representable angle is {nearest:.6g}")
        self.nearest = nearest


def _bin_shift(g: GroupElement, bins: int, period: float) -> int:
    turns_per_period = Fraction(TWO_PI / period).limit_denominator(64)
    if abs(float(turns_per_period) - TWO_PI / period) > 1e-12:
        raise ValueError(f"period {period} must divide a full turn")
    if g.turns is not None:
        s = g.turns * turns_per_period * bins
        if s.denominator == 1:
            return int(s) % bins
        nearest = round(float(s)) * period / bins
        raise IncommensurateAngle(g.angle, nearest)
    s = g.radians * bins / period
    if abs(s - round(s)) > 1e-9:
        raise IncommensurateAngle(g.radians, round(s) * period / bins)
    return int(round(s)) % bins


def shift_orientation(d: OrientationDistribution, g: GroupElement) -> OrientationDistribution:
    """Circularly shift orientation bins by the rotation ``g`` (mod the period)."""
    s = _bin_shift(g, d.bins, d.period)
    return OrientationDistribution(np.roll(d.values, s), d.period)
