"""Exact transfer-operator actions and series-summability diagnostics.

All operators act on the piecewise-affine algebra, so pushing a density
forward, composing with the map, and integrating against an invariant
density are free of quadrature error.  Iterates of the normalized operator
telescope through the reference-measure operator (P_T^n f = P^n(f g)/g),
which keeps the piece count growing linearly instead of geometrically and
defers the division by g to the final quadrature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .maps import PiecewiseLinearMap, tent_map, three_branch_map
from .piecewise import PiecewiseAffineFunction, integrate_product, pw_sum


def frobenius_perron(map_: PiecewiseLinearMap, f: PiecewiseAffineFunction) -> PiecewiseAffineFunction:
    """Push a function forward under the map w.r.t. Lebesgue measure.

    Each affine branch contributes |slope|^-1 * f(inverse branch) on the
    branch image, so the result stays piecewise affine.
    """
    lo, hi = map_.domain.lo, map_.domain.hi
    parts = []
    for (piece, s, c) in map_.branches:
        a_img, b_img = s * piece.lo + c, s * piece.hi + c
        img_lo, img_hi = min(a_img, b_img), max(a_img, b_img)
        if img_hi - img_lo < 1e-15:
            continue
        part = f.compose_affine(1.0 / s, -c / s, img_lo, img_hi) * (1.0 / abs(s))
        parts.append(part.embed(lo, hi))
    return pw_sum(parts).pruned()


def tent_frobenius_perron(a: float, f: PiecewiseAffineFunction) -> PiecewiseAffineFunction:
    """Transfer operator of the tent map: the two inverse branches
    (x+1-a)/a and -(x+1-a)/a, each weighted 1/a, supported on [-1, a-1]."""
    return frobenius_perron(tent_map(a), f)


def three_branch_frobenius_perron(f: PiecewiseAffineFunction) -> PiecewiseAffineFunction:
    """Transfer operator of the three-branch map (Lebesgue is invariant, so
    this is already the normalized operator)."""
    return frobenius_perron(three_branch_map(), f)


def koopman(map_: PiecewiseLinearMap, f: PiecewiseAffineFunction) -> PiecewiseAffineFunction:
    """Exact composition f o T."""
    return f.compose_branches(map_.branch_tuples()).pruned()


class NormalizedTransfer:
    """Transfer operator normalized by an invariant density g: f -> P(f g)/g.

    The density must be a step function (true for Ulam densities and for the
    tent-density recursion), which keeps every action exact.  `masked_cells`
    counts quotient cells suppressed because g fell below the floor; it is a
    diagnostic only and is not synchronized across threads.
    """

    def __init__(self, map_: PiecewiseLinearMap, gstar: PiecewiseAffineFunction, floor: float = 1e-12):
        if not gstar.is_step(1e-15):
            raise ValueError("the invariant density must be a step function")
        self.map = map_
        self.gstar = gstar
        self.floor = floor
        self.masked_cells = 0

    def __call__(self, f: PiecewiseAffineFunction) -> PiecewiseAffineFunction:
        pushed = frobenius_perron(self.map, f.scale_by_step(self.gstar))
        out, masked = pushed.divide_by_step(self.gstar, self.floor)
        self.masked_cells += masked
        return out.pruned()

    # -- telescoped iteration helpers ----------------------------------
    def weighted(self, f: PiecewiseAffineFunction) -> PiecewiseAffineFunction:
        """f*g, the Lebesgue-side representative of f."""
        return f.scale_by_step(self.gstar).pruned()

    def push(self, v: PiecewiseAffineFunction) -> PiecewiseAffineFunction:
        """One reference-measure transfer step of a weighted representative."""
        return frobenius_perron(self.map, v)

    def inner(self, v: PiecewiseAffineFunction, f: PiecewiseAffineFunction,
              lo: float | None = None, hi: float | None = None) -> float:
        """∫ (v/g) f dν = ∫ v f dx for a weighted representative v."""
        return integrate_product([v, f], lo, hi)

    def nu_mass(self, lo: float, hi: float) -> float:
        return self.gstar.integral(lo, hi)

    def nu_integral(self, f: PiecewiseAffineFunction, lo: float | None = None, hi: float | None = None) -> float:
        return integrate_product([f, self.gstar], lo, hi)


def normalized_transfer(p_action, gstar: PiecewiseAffineFunction, f: PiecewiseAffineFunction,
                        floor: float = 1e-12) -> PiecewiseAffineFunction:
    """One application of the normalized operator built from a raw transfer
    action: P(f g)/g on the support of g, zero where g <= floor."""
    pushed = p_action(f.scale_by_step(gstar))
    out, _ = pushed.divide_by_step(gstar, floor)
    return out.pruned()


def tent_transfer(a: float, gstar: PiecewiseAffineFunction, floor: float = 1e-12) -> NormalizedTransfer:
    return NormalizedTransfer(tent_map(a), gstar, floor)


def three_branch_transfer() -> NormalizedTransfer:
    g = PiecewiseAffineFunction.constant(0.0, 1.0, 1.0)
    return NormalizedTransfer(three_branch_map(), g)


@dataclass
class ConditionReport:
    """Summability diagnostics for the dyadic/full series of iterate norms.

    V[n-1] is the L2(nu) norm of the n-term partial sum of normalized-operator
    iterates; the two partial-sum arrays track the full series sum n^(-3/2) V_n
    and its dyadic counterpart sum 2^(-j/2) V_{2^j}, which bound each other.
    """

    K: int
    V: list[float]
    series_partial: list[float]
    dyadic_partial: list[float]
    theta: float
    theta_residual: float
    iterate_norm2: list[float] = field(default_factory=list)
    iterate_norm1: list[float] = field(default_factory=list)
    interp_bound: list[float] = field(default_factory=list)

    def to_json(self, **extra) -> str:
        payload = {
            "K": self.K,
            "V": self.V,
            "series_partial": self.series_partial,
            "dyadic_partial": self.dyadic_partial,
            "decay_fit": {"theta": self.theta, "residual": self.theta_residual},
            "iterate_norm2": self.iterate_norm2,
            "iterate_norm1": self.iterate_norm1,
            "interp_bound": self.interp_bound,
        }
        payload.update(extra)
        return json.dumps(payload, sort_keys=True)


def _fit_decay_rate(norms: np.ndarray) -> tuple[float, float]:
    """Least-squares geometric rate of a norm sequence, fitted on the tail
    half to skip the transient.  Sequences that hit exact zero fit theta=0."""
    norms = np.asarray(norms)
    pos = norms > 0
    if not np.all(pos):
        return 0.0, 0.0
    n = len(norms)
    start = n // 2 if n >= 4 else 0
    idx = np.arange(start + 1, n + 1, dtype=float)
    logs = np.log(norms[start:])
    if len(idx) < 2:
        return 1.0, 0.0
    slope, intercept = np.polyfit(idx, logs, 1)
    resid = float(np.sqrt(np.mean((logs - (slope * idx + intercept)) ** 2)))
    return float(math.exp(slope)), resid


_ZERO_NORM = 1e-14


def condition_report(h: PiecewiseAffineFunction, transfer_action: NormalizedTransfer,
                     nu: PiecewiseAffineFunction | None = None, K: int = 64) -> ConditionReport:
    """Norms V_n of partial sums of transfer iterates plus decay diagnostics.

    Requires h centered under nu (the invariant measure of the action) to
    1e-9.  Norms are exact piecewise quadratures; once an iterate vanishes
    identically the remaining V_n are constant and filled without iterating.
    """
    if K < 8:
        raise ValueError("need K >= 8")
    g = transfer_action.gstar if nu is None else nu
    mean = integrate_product([h, g])
    if abs(mean) > 1e-9:
        raise ValueError(f"observable is not centered: ∫ h dν = {mean:.3e}")
    ginv = g.reciprocal_step(transfer_action.floor)
    sup_h = h.sup_norm()

    v = transfer_action.weighted(h)     # P^k (h g), k = 0
    running = v                          # sum of iterates 0..k
    scale = max(v.norm_l1(), 1e-30)
    V = []
    pt2 = []
    pt1 = []
    interp = []
    for n in range(1, K + 1):
        V.append(math.sqrt(max(integrate_product([running, running, ginv]), 0.0)))
        v = transfer_action.push(v).pruned()
        l1 = v.norm_l1()
        if l1 <= _ZERO_NORM * scale:
            # an identically-zero iterate fixes the partial sum; fill the
            # remaining V_n with the constant instead of iterating on
            pt2.append(0.0)
            pt1.append(0.0)
            interp.append(0.0)
            V.extend(V[-1] for _ in range(K - len(V)))
            break
        running = pw_sum([running, v]).pruned()
        pt2.append(math.sqrt(max(integrate_product([v, v, ginv]), 0.0)))
        pt1.append(l1)
        interp.append(math.sqrt(max(sup_h, 0.0) * l1))
    theta, resid = _fit_decay_rate(np.array(pt2)) if pt2 else (0.0, 0.0)

    ns = np.arange(1, K + 1, dtype=float)
    series_partial = np.cumsum(np.array(V) * ns ** (-1.5)).tolist()
    dyadic = []
    total = 0.0
    j = 0
    while 2**j <= K:
        total += 2.0 ** (-j / 2.0) * V[2**j - 1]
        dyadic.append(total)
        j += 1
    return ConditionReport(
        K=K,
        V=V,
        series_partial=series_partial,
        dyadic_partial=dyadic,
        theta=theta,
        theta_residual=resid,
        iterate_norm2=pt2,
        iterate_norm1=pt1,
        interp_bound=interp,
    )
