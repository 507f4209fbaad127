"""Piecewise-linear interval maps and tent-map structure.

Branch selection uses half-open pieces ``[lo, hi)`` with the final piece
closed; the maps in scope are continuous so the convention only fixes
behaviour on a null set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"degenerate interval [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def intersects(self, other: "Interval", tol: float = 0.0) -> bool:
        return self.lo < other.hi - tol and other.lo < self.hi - tol


@dataclass(frozen=True)
class AffineMap:
    """x -> slope*x + intercept."""

    slope: float
    intercept: float

    def __call__(self, x):
        return self.slope * x + self.intercept

    def inverted(self) -> "AffineMap":
        if self.slope == 0.0:
            raise ValueError("constant map has no inverse")
        return AffineMap(1.0 / self.slope, -self.intercept / self.slope)

    def image(self, iv: Interval) -> Interval:
        a, b = self(iv.lo), self(iv.hi)
        return Interval(min(a, b), max(a, b))


class PiecewiseLinearMap:
    """Finitely many affine branches tiling an interval."""

    def __init__(self, domain: Interval, branches):
        self.domain = domain
        self.branches = [(Interval(p.lo, p.hi) if isinstance(p, Interval) else Interval(*p), float(s), float(c))
                         for (p, s, c) in branches]
        self._validate()
        edges = [self.branches[0][0].lo] + [b[0].hi for b in self.branches]
        self._edges = np.array(edges)
        self._slopes = np.array([s for (_, s, _) in self.branches])
        self._intercepts = np.array([c for (_, _, c) in self.branches])

    def _validate(self):
        tol = 1e-12
        prev = self.domain.lo
        for (piece, s, c) in self.branches:
            if abs(piece.lo - prev) > tol:
                raise ValueError("branch pieces must tile the domain without gaps")
            prev = piece.hi
            for x in (piece.lo, piece.hi):
                y = s * x + c
                if not self.domain.contains(y, tol=1e-9):
                    raise ValueError(f"branch image leaves the domain at x={x}: {y}")
        if abs(prev - self.domain.hi) > tol:
            raise ValueError("branch pieces must cover the domain")

    def branch_tuples(self):
        """Branches as (lo, hi, slope, intercept), for the piecewise algebra."""
        return [(p.lo, p.hi, s, c) for (p, s, c) in self.branches]

    def branch_index(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._edges, x, side="right") - 1
        return np.clip(idx, 0, len(self.branches) - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        if np.any(xv < self.domain.lo) or np.any(xv > self.domain.hi):
            raise ValueError("point outside the map domain")
        idx = self.branch_index(xv)
        out = self._slopes[idx] * xv + self._intercepts[idx]
        np.clip(out, self.domain.lo, self.domain.hi, out=out)
        return float(out[0]) if scalar else out

    def step(self, x: np.ndarray) -> np.ndarray:
        """Vectorized map application without domain checks (hot loop use)."""
        idx = self.branch_index(x)
        out = self._slopes[idx] * x + self._intercepts[idx]
        np.clip(out, self.domain.lo, self.domain.hi, out=out)
        return out

    def image_of(self, iv: Interval) -> Interval:
        """Exact image interval of iv (evaluates endpoints and interior kinks)."""
        pts = [iv.lo, iv.hi]
        pts += [e for e in self._edges[1:-1] if iv.lo < e < iv.hi]
        vals = [self(p) for p in pts]
        return Interval(min(vals), max(vals))


def evaluate(map_: PiecewiseLinearMap, x: float) -> float:
    return map_(x)


def iterate(map_: PiecewiseLinearMap, x: float, n: int):
    """Orbit [x, T(x), ..., T^n(x)]."""
    orbit = [float(x)]
    for _ in range(n):
        orbit.append(map_(orbit[-1]))
    return orbit


def tent_map(a: float) -> PiecewiseLinearMap:
    """The symmetric tent x -> a - 1 - a|x| on [-1, 1], slope parameter in (1, 2]."""
    _check_tent_param(a)
    dom = Interval(-1.0, 1.0)
    return PiecewiseLinearMap(dom, [
        (Interval(-1.0, 0.0), a, a - 1.0),
        (Interval(0.0, 1.0), -a, a - 1.0),
    ])


def three_branch_map() -> PiecewiseLinearMap:
    """Slope-2 map on [0,1] that leaves both halves invariant (non-ergodic)."""
    dom = Interval(0.0, 1.0)
    return PiecewiseLinearMap(dom, [
        (Interval(0.0, 0.25), 2.0, 0.0),
        (Interval(0.25, 0.75), 2.0, -0.5),
        (Interval(0.75, 1.0), 2.0, -1.0),
    ])


def _check_tent_param(a: float):
    if not 1.0 < a <= 2.0:
        raise ValueError(f"tent parameter must lie in (1, 2], got {a}")
    if a <= 1.0 + 1e-6:
        raise ValueError(f"tent parameter {a} too close to 1 for stable classification")


def tent_fixed_point(a: float) -> float:
    """The positive fixed point (a-1)/(a+1) of the tent map."""
    return (a - 1.0) / (a + 1.0)


def squared_param(a: float) -> float:
    """a**2 clamped to the parameter window (a = sqrt(2) squares to 2 + 2ulp)."""
    sq = a * a
    if sq > 2.0:
        if sq > 2.0 + 1e-9:
            raise ValueError(f"squared parameter {sq} leaves (1, 2]")
        sq = 2.0
    return sq


def tent_period(a: float) -> int:
    """Cycle length 2^m of the tent-map support, from the parameter window.

    The window exponent is the unique m with 2^(1/2^(m+1)) < a <= 2^(1/2^m);
    classification is by the closed-right window formula, not by numerics.
    """
    _check_tent_param(a)
    m = 0
    while a <= 2.0 ** (1.0 / 2.0 ** (m + 1)):
        m += 1
        if m > 20:
            raise ValueError(f"parameter {a} too close to 1: window exponent exceeds 20")
    return 2**m


def tent_window_exponent(a: float) -> int:
    return int(round(math.log2(tent_period(a))))


@dataclass(frozen=True)
class TentParams:
    """Resolved tent-map parameters: slope a, fixed point, window exponent."""

    a: float
    xstar: float
    m: int
    r: int

    def __post_init__(self):
        tmap = tent_map(self.a)
        if abs(tmap(self.xstar) - self.xstar) > 1e-12:
            raise ValueError("xstar is not fixed by the tent map")
        if self.r != 2**self.m:
            raise ValueError("cycle length must be 2^m")
        if not (2.0 ** (1.0 / 2.0 ** (self.m + 1)) < self.a <= 2.0 ** (1.0 / 2.0**self.m)):
            raise ValueError(f"a={self.a} is outside the window for m={self.m}")


def tent_params(a: float) -> TentParams:
    m = tent_window_exponent(a)
    return TentParams(a=a, xstar=tent_fixed_point(a), m=m, r=2**m)


def tent_conjugacy(a: float, i: int) -> tuple[AffineMap, AffineMap]:
    """The pair (phi, phi^{-1}) conjugating the second-iterate tent to the
    slope-a^2 tent, on the right (i=0) or central (i=1) invariant interval.

    Only defined for a <= sqrt(2), where the second iterate decouples.
    """
    _check_tent_param(a)
    if a > SQRT2 + 1e-12:
        raise ValueError(f"conjugacy requires a <= sqrt(2), got {a}")
    if i not in (0, 1):
        raise ValueError("branch index must be 0 or 1")
    xs = tent_fixed_point(a)
    if i == 1:
        fwd = AffineMap(-1.0 / xs, 0.0)
    else:
        fwd = AffineMap(a / xs, -a - 1.0)
    return fwd, fwd.inverted()


def tent_invariant_interval(a: float, i: int) -> Interval:
    """Domain of the i-th conjugacy branch: central [-x*, x*] or right [x*, x*(1+2/a)]."""
    xs = tent_fixed_point(a)
    return Interval(-xs, xs) if i == 1 else Interval(xs, xs * (1.0 + 2.0 / a))


@dataclass(frozen=True)
class SupportCycle:
    """The 2^m disjoint intervals cyclically permuted by the tent map."""

    intervals: tuple
    period: int

    def __post_init__(self):
        if len(self.intervals) != self.period:
            raise ValueError("cycle length mismatch")
        for j, a in enumerate(self.intervals):
            for b in self.intervals[j + 1:]:
                if a.intersects(b, tol=1e-12):
                    raise ValueError("cycle intervals overlap")

    def union_span(self) -> Interval:
        return Interval(min(iv.lo for iv in self.intervals), max(iv.hi for iv in self.intervals))

    def as_pairs(self):
        return [(iv.lo, iv.hi) for iv in self.intervals]


def _tent_core_interval(a: float) -> Interval:
    """[T_a^2(0), T_a(0)], the forward-invariant interval carrying the density."""
    t0 = a - 1.0
    t20 = a - 1.0 - a * t0
    return Interval(t20, t0)


def tent_support_cycle(a: float) -> SupportCycle:
    """Construct the support cycle from the binary-indexed inverse conjugacies.

    Interval j = 1 + i_1 + 2 i_2 + ... + 2^(m-1) i_m is the image of the core
    interval of the 2^m-fold parameter under phi_{i_1,a}^{-1} ∘ phi_{i_2,a^2}^{-1}
    ∘ ... ; the cyclic ordering is verified numerically against the dynamics.
    """
    m = tent_window_exponent(a)
    r = 2**m
    if m == 0:
        cycle = SupportCycle(intervals=(_tent_core_interval(a),), period=1)
    else:
        top = a ** (2**m)
        base = _tent_core_interval(top)
        intervals = []
        for j in range(r):
            bits = [(j >> k) & 1 for k in range(m)]  # i_1 ... i_m
            lo, hi = base.lo, base.hi
            # apply phi_{i_m, a^{2^{m-1}}}^{-1} first, phi_{i_1, a}^{-1} last
            for k in reversed(range(m)):
                _, inv = tent_conjugacy(a ** (2**k), bits[k])
                p, q = inv(lo), inv(hi)
                lo, hi = min(p, q), max(p, q)
            intervals.append(Interval(lo, hi))
        cycle = SupportCycle(intervals=tuple(intervals), period=r)
    _verify_cycle(tent_map(a), cycle)
    return cycle


def _verify_cycle(map_: PiecewiseLinearMap, cycle: SupportCycle, tol: float = 1e-10):
    for j, iv in enumerate(cycle.intervals):
        nxt = cycle.intervals[(j + 1) % cycle.period]
        img = map_.image_of(iv)
        if abs(img.lo - nxt.lo) > tol or abs(img.hi - nxt.hi) > tol:
            raise ValueError(
                f"support cycle is not cyclically permuted: interval {j} maps to "
                f"[{img.lo}, {img.hi}], expected [{nxt.lo}, {nxt.hi}]"
            )
