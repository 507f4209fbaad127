"""Observables and the long-run variance of scaled partial sums.

Three independent routes to the same quantity are implemented: the
resolvent series 2∫ h (Σ P_T^n h) dν − ∫ h² dν, the autocovariance series
restricted to one interval of the support cycle, and (for tent maps below
sqrt(2)) the closed-form recursion that rescales the variance of the
squared-parameter map.  Non-ergodic maps get a piecewise-constant variance
profile over the invariant components instead of a single constant, either
from the per-component autocovariance series or from the dyadic
partial-sum series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .densities import tent_density
from .maps import (
    Interval,
    PiecewiseLinearMap,
    SQRT2,
    SupportCycle,
    _check_tent_param,
    squared_param,
    tent_fixed_point,
    tent_map,
    tent_support_cycle,
    tent_window_exponent,
    three_branch_map,
)
from .piecewise import (
    PieceBudgetExceeded,
    PiecewiseAffineFunction,
    integrate_product,
    pw_sum,
)
from .transfer import NormalizedTransfer, koopman, three_branch_transfer


class DivergenceError(RuntimeError):
    """Series diagnostics indicate the truncated series is not summable."""

    def __init__(self, message: str, terms):
        super().__init__(message)
        self.terms = list(terms)


@dataclass(frozen=True)
class Observable:
    """A nu-centered function along with the measure it was centered against."""

    f: PiecewiseAffineFunction
    centered_wrt: str
    projected: bool = False

    def check_centered(self, nu: PiecewiseAffineFunction, tol: float = 1e-9):
        mean = integrate_product([self.f, nu])
        if abs(mean) > tol:
            raise ValueError(f"observable not centered against {self.centered_wrt}: mean {mean:.3e}")


@dataclass
class VarianceEstimate:
    sigma2: float
    method: str
    truncation_J: int = 0
    tail_bound: float = 0.0
    stderr: float | None = None

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("variance must be nonnegative")

    def to_dict(self) -> dict:
        out = {
            "sigma2": self.sigma2,
            "method": self.method,
            "truncation_J": self.truncation_J,
            "tail_bound": self.tail_bound,
        }
        if self.stderr is not None:
            out["stderr"] = self.stderr
        return out


@dataclass
class VarianceProfile:
    """Piecewise-constant limiting variance over invariant components."""

    components: list[tuple[tuple[tuple[float, float], ...], float]]
    method: str = ""
    level_partials: list[list[float]] | None = None

    def __post_init__(self):
        for _, value in self.components:
            if value < -1e-12:
                raise ValueError("profile values must be nonnegative")

    def value_at(self, x: float) -> float:
        for supports, value in self.components:
            for (lo, hi) in supports:
                if lo <= x <= hi:
                    return value
        raise ValueError(f"{x} lies in no component")

    def mixture(self, weights) -> list[tuple[float, float]]:
        """(weight, variance) pairs for the marginal mixture law."""
        return [(w, value) for w, (_, value) in zip(weights, self.components)]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "components": [
                {"support": [list(iv) for iv in supports], "value": value}
                for supports, value in self.components
            ],
        }


@dataclass(frozen=True)
class ErgodicComponent:
    """One ergodic piece: the cycle of supports permuted by the map."""

    cycle: tuple

    @property
    def period(self) -> int:
        return len(self.cycle)

    @property
    def first(self) -> Interval:
        return self.cycle[0]

    def support_pairs(self):
        return tuple((iv.lo, iv.hi) for iv in self.cycle)


# ----------------------------------------------------------------------
# tent-map observables
# ----------------------------------------------------------------------

def tent_mean(a: float, base_grid: int = 4096) -> float:
    """Stationary mean of the coordinate under the tent invariant measure.

    Above sqrt(2) this is the exact quadrature against the Ulam density; below,
    the affine pull-back of both conjugacy branches collapses the integral to
    the recursion m_a = (a-1)/(2a) - (a-1) x*(a) m_{a^2} / (2a).
    """
    _check_tent_param(a)
    if a > SQRT2:
        g = tent_density(a, base_grid)
        return integrate_product([PiecewiseAffineFunction.affine(-1.0, 1.0, 1.0, 0.0), g])
    xs = tent_fixed_point(a)
    m_sq = tent_mean(squared_param(a), base_grid)
    return (a - 1.0) / (2.0 * a) - (a - 1.0) * xs * m_sq / (2.0 * a)


def tent_observable(a: float, base_grid: int = 4096) -> Observable:
    """The centered coordinate y - m_a on [-1, 1]."""
    m = tent_mean(a, base_grid)
    return Observable(
        f=PiecewiseAffineFunction.affine(-1.0, 1.0, 1.0, -m),
        centered_wrt=f"tent(a={a})",
    )


def blocked_observable(h: Observable, map_: PiecewiseLinearMap, r: int) -> Observable:
    """(1/sqrt(r)) sum of the first r Koopman iterates, exact in the algebra."""
    if r < 1:
        raise ValueError("block length must be >= 1")
    if r == 1:
        return h
    terms = [h.f]
    try:
        for _ in range(r - 1):
            terms.append(koopman(map_, terms[-1]))
        f = pw_sum(terms) * (1.0 / math.sqrt(r))
        return Observable(f=f.pruned(), centered_wrt=h.centered_wrt)
    except PieceBudgetExceeded:
        projected = [t.project_step(2**14) for t in terms]
        f = pw_sum(projected) * (1.0 / math.sqrt(r))
        return Observable(f=f, centered_wrt=h.centered_wrt, projected=True)


# ----------------------------------------------------------------------
# autocovariances and variance estimates
# ----------------------------------------------------------------------

_DEAD_REL = 1e-13


def autocovariance(h: Observable, transfer_action: NormalizedTransfer, j: int) -> float:
    """∫ (P_T^j h) h dν, the lag-j autocovariance under the invariant measure."""
    if j < 0:
        raise ValueError("lag must be nonnegative")
    v = transfer_action.weighted(h.f)
    for _ in range(j):
        v = transfer_action.push(v).pruned()
    return transfer_action.inner(v, h.f)


def autocovariance_sequence(h: Observable, transfer_action: NormalizedTransfer, max_lag: int,
                            *, step: int = 1, window=None):
    """Lags 0..max_lag of ∫ (P_T^(step*j) q) h dν with q = h restricted to `window`.

    Returns (terms, exhausted_at) where exhausted_at is the first lag whose
    iterate vanished identically (terms beyond it are exactly zero), or None.
    """
    v = transfer_action.weighted(h.f)
    if window is not None:
        v = v.windowed_union(window).pruned()
    scale = max(v.norm_l1(), 1e-300)
    terms = [transfer_action.inner(v, h.f)]
    exhausted = None
    for j in range(1, max_lag + 1):
        for _ in range(step):
            v = transfer_action.push(v)
        v = v.pruned()
        if v.norm_l1() <= _DEAD_REL * scale:
            exhausted = j
            terms.extend([0.0] * (max_lag + 1 - len(terms)))
            break
        terms.append(transfer_action.inner(v, h.f))
    return np.array(terms), exhausted


def _geometric_tail(terms: np.ndarray, exhausted) -> float:
    """Tail bound for the dropped lags from a geometric fit of |terms|.

    Exactly-exhausted series have zero tail; non-decaying fits raise."""
    if exhausted is not None:
        return 0.0
    mags = np.abs(terms[1:])
    nz = mags > 0
    if not np.any(nz):
        return 0.0
    tail_half = mags[len(mags) // 2:]
    tail_half = tail_half[tail_half > 0]
    if len(tail_half) < 2:
        return float(mags[-1])
    idx = np.arange(len(tail_half), dtype=float)
    slope, intercept = np.polyfit(idx, np.log(tail_half), 1)
    theta = math.exp(slope)
    if theta >= 0.99:
        # a rate this close to 1 means the lags are not summably decaying
        # (periodic windows produce persistent oscillating lags)
        raise DivergenceError(
            f"autocovariance lags are not decaying (fitted rate {theta:.4f})", terms
        )
    last = float(mags[-1]) if mags[-1] > 0 else float(tail_half[-1])
    return 2.0 * last * theta / (1.0 - theta)


def _clamp_sigma2(value: float, terms) -> float:
    if value < -1e-8:
        raise DivergenceError(f"variance estimate {value:.3e} is negative beyond tolerance", terms)
    return max(value, 0.0)


def sigma2_resolvent(h: Observable, transfer_action: NormalizedTransfer, J: int = 64) -> VarianceEstimate:
    """Long-run variance via 2∫ h f dν − ∫ h² dν with f the truncated resolvent sum."""
    h.check_centered(transfer_action.gstar)
    terms, exhausted = autocovariance_sequence(h, transfer_action, J)
    tail = _geometric_tail(terms, exhausted)
    sigma2 = float(terms[0] + 2.0 * terms[1:].sum())
    j_used = (exhausted - 1) if exhausted is not None else J
    return VarianceEstimate(
        sigma2=_clamp_sigma2(sigma2, terms),
        method="resolvent",
        truncation_J=j_used,
        tail_bound=tail,
    )


def sigma2_autocovariance(h: Observable, map_: PiecewiseLinearMap, transfer_action: NormalizedTransfer,
                          cycle: SupportCycle, J: int = 64) -> VarianceEstimate:
    """Long-run variance via the autocovariance series of the blocked observable
    restricted to the first interval of the support cycle."""
    h.check_centered(transfer_action.gstar)
    r = cycle.period
    hr = blocked_observable(h, map_, r)
    first = cycle.intervals[0]
    terms, exhausted = autocovariance_sequence(
        hr, transfer_action, J, step=r, window=[(first.lo, first.hi)]
    )
    tail = r * _geometric_tail(terms, exhausted)
    sigma2 = float(r * (terms[0] + 2.0 * terms[1:].sum()))
    j_used = (exhausted - 1) if exhausted is not None else J
    return VarianceEstimate(
        sigma2=_clamp_sigma2(sigma2, terms),
        method="autocov",
        truncation_J=j_used,
        tail_bound=tail,
    )


def tent_sigma_recursion(a: float, base: VarianceEstimate | float) -> float:
    """Rescale the base-window deviation sigma(h_b), b = a^(2^m), down to sigma(h_a).

    The factor is a(a-1) / (sqrt(2^m) b (b-1)) times the product of the
    squared (a^(2^k) - 1) over the recursion chain."""
    _check_tent_param(a)
    m = tent_window_exponent(a)
    if m < 1:
        raise ValueError(f"a={a} is already in the base window (a > sqrt(2))")
    sigma_base = math.sqrt(base.sigma2) if isinstance(base, VarianceEstimate) else float(base)
    b = a ** (2**m)
    prod = 1.0
    for k in range(m):
        prod *= (a ** (2**k) - 1.0) ** 2
    return sigma_base * a * (a - 1.0) / (math.sqrt(2.0**m) * b * (b - 1.0)) * prod


def tent_sigma_recursion_alt(a: float, base: VarianceEstimate | float) -> float:
    """Equivalent product form using the fixed points x*(a^(2^k)); kept as an
    internal consistency check of the recursion algebra."""
    _check_tent_param(a)
    m = tent_window_exponent(a)
    if m < 1:
        raise ValueError(f"a={a} is already in the base window (a > sqrt(2))")
    sigma_base = math.sqrt(base.sigma2) if isinstance(base, VarianceEstimate) else float(base)
    prod = 1.0
    for k in range(m):
        ak = a ** (2**k)
        prod *= tent_fixed_point(ak) * (ak - 1.0)
    return sigma_base / (math.sqrt(2.0**m) * a ** (2**m - 1)) * prod


# ----------------------------------------------------------------------
# non-ergodic variance profiles
# ----------------------------------------------------------------------

def variance_profile(components: list[ErgodicComponent], h: Observable, map_: PiecewiseLinearMap,
                     transfer_action: NormalizedTransfer, J: int = 64) -> VarianceProfile:
    """Piecewise-constant limiting variance: on each ergodic component, the
    normalized autocovariance series of the globally blocked observable."""
    h.check_centered(transfer_action.gstar)
    r = 1
    for comp in components:
        r *= comp.period
    hr = blocked_observable(h, map_, r)
    out = []
    for comp in components:
        first = comp.first
        mass = sum(transfer_action.nu_mass(iv.lo, iv.hi) for iv in comp.cycle)
        if mass <= 0:
            raise ValueError("component carries no invariant mass")
        terms, exhausted = autocovariance_sequence(
            hr, transfer_action, J, step=r, window=[(first.lo, first.hi)]
        )
        _geometric_tail(terms, exhausted)  # raises on divergence diagnostics
        value = float(comp.period / mass * (terms[0] + 2.0 * terms[1:].sum()))
        out.append((comp.support_pairs(), max(value, 0.0)))
    return VarianceProfile(components=out, method="autocov")


def variance_profile_dyadic(h: Observable, map_: PiecewiseLinearMap,
                            transfer_action: NormalizedTransfer,
                            invariant_partition: list[list[tuple[float, float]]],
                            J: int = 16) -> VarianceProfile:
    """Variance profile from the dyadic series over levels n = 2^j.

    The level-n cross term conditioned on an invariant component reduces, via
    the duality of the transfer and composition operators, to the weighted lag
    sum Σ_s min(s, 2n−s) c_s with c_s the component-restricted autocovariance;
    only one pass of transfer iterates up to lag 2^(J+1) − 1 is needed, and
    the pass stops early once an iterate vanishes identically.
    """
    h.check_centered(transfer_action.gstar)
    max_lag = 2 ** (J + 1) - 1
    v = transfer_action.weighted(h.f)
    scale = max(v.norm_l1(), 1e-300)
    ncomp = len(invariant_partition)
    cov = np.zeros((ncomp, max_lag + 1))
    masses = np.empty(ncomp)
    base = np.empty(ncomp)
    for i, supports in enumerate(invariant_partition):
        masses[i] = sum(transfer_action.nu_mass(lo, hi) for (lo, hi) in supports)
        if masses[i] <= 0:
            raise ValueError("invariant component carries no mass")
        base[i] = sum(integrate_product([h.f, h.f, transfer_action.gstar], lo, hi)
                      for (lo, hi) in supports) / masses[i]
    for s in range(1, max_lag + 1):
        v = transfer_action.push(v).pruned()
        if v.norm_l1() <= _DEAD_REL * scale:
            break
        for i, supports in enumerate(invariant_partition):
            cov[i, s] = sum(integrate_product([v, h.f], lo, hi) for (lo, hi) in supports) / masses[i]

    values = base.copy()
    partials = [[] for _ in range(ncomp)]
    for j in range(J + 1):
        n = 2**j
        s = np.arange(1, 2 * n)
        w = np.minimum(s, 2 * n - s)
        level = cov[:, 1:2 * n] @ w / float(n)
        values = values + level
        for i in range(ncomp):
            partials[i].append(float(values[i]))
    for i in range(ncomp):
        if values[i] < -1e-8:
            raise DivergenceError(
                f"dyadic series for component {i} went negative: {values[i]:.3e}",
                partials[i],
            )
    comps = [
        (tuple(tuple(iv) for iv in supports), float(max(values[i], 0.0)))
        for i, supports in enumerate(invariant_partition)
    ]
    return VarianceProfile(components=comps, method="dyadic", level_partials=partials)


# ----------------------------------------------------------------------
# bundled systems for the CLI and tests
# ----------------------------------------------------------------------

@dataclass
class MapSystem:
    """A map together with its invariant density, transfer action, and
    ergodic decomposition."""

    name: str
    map: PiecewiseLinearMap
    density: PiecewiseAffineFunction
    transfer: NormalizedTransfer
    components: list[ErgodicComponent]
    observable: Observable


_SYSTEMS: dict = {}


def tent_system(a: float, base_grid: int = 4096) -> MapSystem:
    key = ("tent", a, base_grid)
    if key not in _SYSTEMS:
        g = tent_density(a, base_grid)
        cycle = tent_support_cycle(a)
        _SYSTEMS[key] = MapSystem(
            name=f"tent(a={a})",
            map=tent_map(a),
            density=g,
            transfer=NormalizedTransfer(tent_map(a), g),
            components=[ErgodicComponent(cycle=cycle.intervals)],
            observable=tent_observable(a, base_grid),
        )
    return _SYSTEMS[key]


def three_branch_system() -> MapSystem:
    key = ("three_branch",)
    if key not in _SYSTEMS:
        transfer = three_branch_transfer()
        h = Observable(
            f=PiecewiseAffineFunction.step([0.0, 0.25, 0.5, 0.75, 1.0], [1.0, -1.0, -2.0, 2.0]),
            centered_wrt="three_branch",
        )
        _SYSTEMS[key] = MapSystem(
            name="three_branch",
            map=three_branch_map(),
            density=transfer.gstar,
            transfer=transfer,
            components=[
                ErgodicComponent(cycle=(Interval(0.0, 0.5),)),
                ErgodicComponent(cycle=(Interval(0.5, 1.0),)),
            ],
            observable=h,
        )
    return _SYSTEMS[key]
