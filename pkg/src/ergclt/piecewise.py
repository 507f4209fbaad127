"""Exact algebra of piecewise-affine functions on an interval.

Functions are represented by a strictly increasing breakpoint grid plus a
(slope, intercept) pair per cell.  Cells are half-open ``[b_i, b_{i+1})``,
the last one closed; points outside the span evaluate to 0.  Every
operation needed downstream (sums, affine composition, products against
step functions, definite integrals of products of up to three factors) has
a closed form, so no quadrature error enters the transfer-operator
diagnostics.
"""

from __future__ import annotations

import numpy as np

# Breakpoints closer than this (relative to the span scale) are merged.
_BP_EPS = 1e-14

# Soft bound on representation size; operations that would exceed it raise
# so callers can fall back to a grid projection.
MAX_PIECES = 10**6


class PieceBudgetExceeded(RuntimeError):
    """Raised when an exact operation would exceed MAX_PIECES cells."""


def _dedupe_breakpoints(bp: np.ndarray) -> np.ndarray:
    scale = max(1.0, abs(bp[0]), abs(bp[-1]))
    keep = np.empty(len(bp), dtype=bool)
    keep[0] = True
    keep[1:] = np.diff(bp) > _BP_EPS * scale
    out = bp[keep]
    if len(out) < 2 or out[-1] < bp[-1]:
        out = np.append(out[:-1] if len(out) >= 2 and bp[-1] - out[-1] <= _BP_EPS * scale else out, bp[-1])
    return out


class PiecewiseAffineFunction:
    """A function that is affine on each cell of a breakpoint grid."""

    __slots__ = ("breakpoints", "slopes", "intercepts")

    def __init__(self, breakpoints, slopes, intercepts, validate: bool = True):
        bp = np.asarray(breakpoints, dtype=float)
        sl = np.asarray(slopes, dtype=float)
        ic = np.asarray(intercepts, dtype=float)
        if validate:
            if bp.ndim != 1 or len(bp) < 2:
                raise ValueError("need at least two breakpoints")
            if np.any(np.diff(bp) <= 0):
                raise ValueError("breakpoints must be strictly increasing")
            if sl.shape != (len(bp) - 1,) or ic.shape != (len(bp) - 1,):
                raise ValueError("need one (slope, intercept) pair per cell")
        self.breakpoints = bp
        self.slopes = sl
        self.intercepts = ic

    # ------------------------------------------------------------------
    # constructors
    # ------------------------------------------------------------------
    @classmethod
    def constant(cls, lo: float, hi: float, value: float) -> "PiecewiseAffineFunction":
        return cls(np.array([lo, hi]), np.array([0.0]), np.array([float(value)]), validate=False)

    @classmethod
    def affine(cls, lo: float, hi: float, slope: float, intercept: float) -> "PiecewiseAffineFunction":
        return cls(np.array([lo, hi]), np.array([float(slope)]), np.array([float(intercept)]), validate=False)

    @classmethod
    def zero(cls, lo: float, hi: float) -> "PiecewiseAffineFunction":
        return cls.constant(lo, hi, 0.0)

    @classmethod
    def step(cls, breakpoints, values) -> "PiecewiseAffineFunction":
        bp = np.asarray(breakpoints, dtype=float)
        v = np.asarray(values, dtype=float)
        return cls(bp, np.zeros(len(v)), v)

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------
    @property
    def lo(self) -> float:
        return float(self.breakpoints[0])

    @property
    def hi(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def num_pieces(self) -> int:
        return len(self.slopes)

    def is_step(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.slopes) <= tol))

    def cell_index(self, x: np.ndarray) -> np.ndarray:
        """Index of the cell containing each x (x must lie in the span)."""
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(idx, 0, self.num_pieces - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        idx = self.cell_index(xv)
        out = self.slopes[idx] * xv + self.intercepts[idx]
        out[(xv < self.breakpoints[0]) | (xv > self.breakpoints[-1])] = 0.0
        return float(out[0]) if scalar else out

    def piece_values(self, side: str = "mid") -> np.ndarray:
        """Values at cell midpoints (or 'left'/'right' edges)."""
        bp = self.breakpoints
        if side == "mid":
            x = 0.5 * (bp[:-1] + bp[1:])
        elif side == "left":
            x = bp[:-1]
        else:
            x = bp[1:]
        return self.slopes * x + self.intercepts

    def sup_norm(self) -> float:
        """max |f| over the span (attained at cell edges for affine pieces)."""
        left = self.slopes * self.breakpoints[:-1] + self.intercepts
        right = self.slopes * self.breakpoints[1:] + self.intercepts
        return float(max(np.abs(left).max(), np.abs(right).max()))

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------
    def _coeffs_on(self, grid: np.ndarray):
        """(slope, intercept) arrays of self on a refined grid covering the span."""
        mids = 0.5 * (grid[:-1] + grid[1:])
        idx = self.cell_index(mids)
        sl = self.slopes[idx].copy()
        ic = self.intercepts[idx].copy()
        outside = (mids < self.breakpoints[0]) | (mids > self.breakpoints[-1])
        sl[outside] = 0.0
        ic[outside] = 0.0
        return sl, ic

    def __mul__(self, c: float) -> "PiecewiseAffineFunction":
        c = float(c)
        return PiecewiseAffineFunction(self.breakpoints, self.slopes * c, self.intercepts * c, validate=False)

    __rmul__ = __mul__

    def __neg__(self) -> "PiecewiseAffineFunction":
        return self * -1.0

    def __add__(self, other: "PiecewiseAffineFunction") -> "PiecewiseAffineFunction":
        return pw_sum([self, other])

    def __sub__(self, other: "PiecewiseAffineFunction") -> "PiecewiseAffineFunction":
        return pw_sum([self, -other])

    def scale_by_step(self, weight: "PiecewiseAffineFunction") -> "PiecewiseAffineFunction":
        """Exact product with a step function (result stays piecewise affine)."""
        grid = merge_grids([self, weight])
        sl, ic = self._coeffs_on(grid)
        w = weight._coeffs_on(grid)[1]  # slopes are zero for a step function
        return PiecewiseAffineFunction(grid, sl * w, ic * w, validate=False)

    def divide_by_step(self, weight: "PiecewiseAffineFunction", floor: float = 1e-12):
        """Exact quotient by a step function; cells with weight <= floor map to 0.

        Returns (quotient, masked_cell_count).
        """
        grid = merge_grids([self, weight])
        sl, ic = self._coeffs_on(grid)
        w = weight._coeffs_on(grid)[1]
        ok = w > floor
        inv = np.where(ok, 1.0 / np.where(ok, w, 1.0), 0.0)
        masked = int(np.count_nonzero(~ok & ((sl != 0.0) | (ic != 0.0))))
        return PiecewiseAffineFunction(grid, sl * inv, ic * inv, validate=False), masked

    def reciprocal_step(self, floor: float = 1e-12) -> "PiecewiseAffineFunction":
        """1/f for a step function f, zero where f <= floor."""
        if not self.is_step(1e-15):
            raise ValueError("reciprocal_step requires a step function")
        v = self.intercepts
        ok = v > floor
        return PiecewiseAffineFunction(
            self.breakpoints, np.zeros_like(v), np.where(ok, 1.0 / np.where(ok, v, 1.0), 0.0), validate=False
        )

    # ------------------------------------------------------------------
    # composition and restriction
    # ------------------------------------------------------------------
    def compose_affine(self, slope: float, intercept: float, lo: float, hi: float) -> "PiecewiseAffineFunction":
        """Exact x -> f(slope*x + intercept) on [lo, hi]."""
        if lo >= hi:
            raise ValueError("empty target interval")
        if slope == 0.0:
            return PiecewiseAffineFunction.constant(lo, hi, self(intercept))
        # Preimages of f's breakpoints under the affine map, kept inside (lo, hi).
        pre = (self.breakpoints - intercept) / slope
        if slope < 0:
            pre = pre[::-1]
        inner = pre[(pre > lo) & (pre < hi)]
        grid = _dedupe_breakpoints(np.concatenate(([lo], inner, [hi])))
        mids = 0.5 * (grid[:-1] + grid[1:])
        idx = self.cell_index(slope * mids + intercept)
        sl = self.slopes[idx]
        ic = self.intercepts[idx]
        return PiecewiseAffineFunction(grid, sl * slope, sl * intercept + ic, validate=False)

    def compose_branches(self, branches) -> "PiecewiseAffineFunction":
        """Exact f(T(x)) for a map given as ordered (lo, hi, slope, intercept) branches."""
        parts = []
        grids = []
        for (blo, bhi, s, c) in branches:
            part = self.compose_affine(s, c, blo, bhi)
            parts.append(part)
            grids.append(part.breakpoints)
        grid = _dedupe_breakpoints(np.concatenate(grids))
        if len(grid) - 1 > MAX_PIECES:
            raise PieceBudgetExceeded(f"{len(grid) - 1} pieces")
        mids = 0.5 * (grid[:-1] + grid[1:])
        sl = np.zeros(len(mids))
        ic = np.zeros(len(mids))
        for part in parts:
            inside = (mids > part.lo) & (mids < part.hi)
            if not np.any(inside):
                continue
            idx = part.cell_index(mids[inside])
            sl[inside] = part.slopes[idx]
            ic[inside] = part.intercepts[idx]
        return PiecewiseAffineFunction(grid, sl, ic, validate=False)

    def windowed(self, lo: float, hi: float) -> "PiecewiseAffineFunction":
        """Multiply by the indicator of [lo, hi]; the span is unchanged."""
        return self.windowed_union([(lo, hi)])

    def windowed_union(self, intervals) -> "PiecewiseAffineFunction":
        pts = [p for (a, b) in intervals for p in (a, b)]
        grid = _dedupe_breakpoints(np.unique(np.concatenate([self.breakpoints, np.array(pts, dtype=float)])))
        grid = grid[(grid >= self.lo) & (grid <= self.hi)]
        if grid[0] > self.lo:
            grid = np.concatenate(([self.lo], grid))
        if grid[-1] < self.hi:
            grid = np.concatenate((grid, [self.hi]))
        sl, ic = self._coeffs_on(grid)
        mids = 0.5 * (grid[:-1] + grid[1:])
        keep = np.zeros(len(mids), dtype=bool)
        for (a, b) in intervals:
            keep |= (mids > a) & (mids < b)
        return PiecewiseAffineFunction(grid, np.where(keep, sl, 0.0), np.where(keep, ic, 0.0), validate=False)

    def embed(self, lo: float, hi: float) -> "PiecewiseAffineFunction":
        """Extend the span to [lo, hi] with zero pieces."""
        bp, sl, ic = self.breakpoints, self.slopes, self.intercepts
        scale = max(1.0, abs(lo), abs(hi))
        if lo < bp[0] - _BP_EPS * scale:
            bp = np.concatenate(([lo], bp))
            sl = np.concatenate(([0.0], sl))
            ic = np.concatenate(([0.0], ic))
        if hi > bp[-1] + _BP_EPS * scale:
            bp = np.concatenate((bp, [hi]))
            sl = np.concatenate((sl, [0.0]))
            ic = np.concatenate((ic, [0.0]))
        return PiecewiseAffineFunction(bp, sl, ic, validate=False)

    def pruned(self, tol: float = 1e-13) -> "PiecewiseAffineFunction":
        """Merge adjacent cells whose affine parameters agree within tol."""
        if self.num_pieces == 1:
            return self
        same = (np.abs(np.diff(self.slopes)) <= tol) & (np.abs(np.diff(self.intercepts)) <= tol)
        if not np.any(same):
            return self
        keep = np.concatenate(([True], ~same))
        bp = np.concatenate((self.breakpoints[:-1][keep], [self.breakpoints[-1]]))
        return PiecewiseAffineFunction(bp, self.slopes[keep], self.intercepts[keep], validate=False)

    def project_step(self, n: int) -> "PiecewiseAffineFunction":
        """Cell-average projection onto a uniform n-cell grid over the span."""
        grid = np.linspace(self.lo, self.hi, n + 1)
        vals = np.empty(n)
        for i in range(n):
            vals[i] = integrate_product([self], grid[i], grid[i + 1]) / (grid[i + 1] - grid[i])
        return PiecewiseAffineFunction.step(grid, vals)

    # ------------------------------------------------------------------
    # integration
    # ------------------------------------------------------------------
    def integral(self, lo: float | None = None, hi: float | None = None) -> float:
        return integrate_product([self], lo, hi)

    def norm_l1(self, weight: "PiecewiseAffineFunction | None" = None) -> float:
        """∫ |f| w dx; |f| is split exactly at interior zero crossings."""
        absf = self.abs()
        fns = [absf] if weight is None else [absf, weight]
        return integrate_product(fns)

    def norm_l2(self, weight: "PiecewiseAffineFunction | None" = None) -> float:
        fns = [self, self] if weight is None else [self, self, weight]
        return float(np.sqrt(max(integrate_product(fns), 0.0)))

    def abs(self) -> "PiecewiseAffineFunction":
        """Exact |f|: inserts breakpoints at interior sign changes."""
        left = self.slopes * self.breakpoints[:-1] + self.intercepts
        right = self.slopes * self.breakpoints[1:] + self.intercepts
        cross = (left * right < 0) & (self.slopes != 0)
        roots = -self.intercepts[cross] / self.slopes[cross]
        grid = _dedupe_breakpoints(np.unique(np.concatenate([self.breakpoints, roots])))
        sl, ic = self._coeffs_on(grid)
        mids = 0.5 * (grid[:-1] + grid[1:])
        neg = sl * mids + ic < 0
        return PiecewiseAffineFunction(grid, np.where(neg, -sl, sl), np.where(neg, -ic, ic), validate=False)


def merge_grids(fns, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Common refined breakpoint grid of several functions, clipped to [lo, hi]."""
    grid = np.unique(np.concatenate([f.breakpoints for f in fns]))
    if lo is not None or hi is not None:
        a = grid[0] if lo is None else lo
        b = grid[-1] if hi is None else hi
        if a >= b:
            raise ValueError("empty integration interval")
        grid = np.concatenate(([a], grid[(grid > a) & (grid < b)], [b]))
    return _dedupe_breakpoints(grid)


def pw_sum(fns) -> PiecewiseAffineFunction:
    """Exact sum of several piecewise-affine functions on the union span."""
    lo = min(f.lo for f in fns)
    hi = max(f.hi for f in fns)
    grid = merge_grids([f.embed(lo, hi) for f in fns])
    if len(grid) - 1 > MAX_PIECES:
        raise PieceBudgetExceeded(f"{len(grid) - 1} pieces")
    sl = np.zeros(len(grid) - 1)
    ic = np.zeros(len(grid) - 1)
    for f in fns:
        s, c = f._coeffs_on(grid)
        sl += s
        ic += c
    return PiecewiseAffineFunction(grid, sl, ic, validate=False)


def integrate_product(fns, lo: float | None = None, hi: float | None = None) -> float:
    """Exact ∫ f1*f2*f3 dx over [lo, hi] for up to three piecewise-affine factors.

    Each factor is affine per cell of the merged grid, so the integrand is a
    polynomial of degree <= 3 per cell; odd powers of the centered coordinate
    integrate to zero, which keeps the closed forms short and stable.
    """
    if not 1 <= len(fns) <= 3:
        raise ValueError("supports products of one to three factors")
    span_lo = max(f.lo for f in fns) if lo is None else lo
    span_hi = min(f.hi for f in fns) if hi is None else hi
    if span_hi <= span_lo:
        return 0.0
    grid = merge_grids(fns, span_lo, span_hi)
    w = np.diff(grid)
    mids = 0.5 * (grid[:-1] + grid[1:])
    vals = []
    slps = []
    for f in fns:
        s, c = f._coeffs_on(grid)
        outside = (mids < f.lo) | (mids > f.hi)
        v = s * mids + c
        v[outside] = 0.0
        s = np.where(outside, 0.0, s)
        vals.append(v)
        slps.append(s)
    if len(fns) == 1:
        cell = vals[0]
    elif len(fns) == 2:
        cell = vals[0] * vals[1] + slps[0] * slps[1] * w**2 / 12.0
    else:
        v1, v2, v3 = vals
        s1, s2, s3 = slps
        cell = v1 * v2 * v3 + (w**2 / 12.0) * (v1 * s2 * s3 + s1 * v2 * s3 + s1 * s2 * v3)
    return float(np.dot(w, cell))
