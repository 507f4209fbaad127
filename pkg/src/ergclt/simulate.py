"""Monte Carlo realization of the scaled partial-sum process and
goodness-of-fit checks against the predicted limit laws.

Randomness contract: every stream is a counter-based Philox generator keyed
by (seed, purpose); path i consumes the i-th column of each pre-drawn block,
so path results are pure functions of (seed, path index) and independent of
execution order.

Maps whose branches all have slope ±2 with dyadic data (the full tent and
the three-branch example) are iterated with an exact sliding-window bit
engine: double-precision orbits of such maps are binary shifts and collapse
onto the critical orbit after ~53 steps, which would destroy the statistics.
The engine keeps the leading 64 bits of the binary expansion and streams
fresh tail bits from the path's generator, which reproduces the law of exact
orbits from stationary initial points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import ndtr

from .clt import Observable, VarianceProfile
from .maps import PiecewiseLinearMap
from .piecewise import PiecewiseAffineFunction, integrate_product
from .transfer import NormalizedTransfer, koopman

_TWO64 = 1 << 64

# stream salts: initial points vs orbit tail bits
_STREAM_INIT = 0x1417
_STREAM_BITS = 0xB175


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed % _TWO64, stream], dtype=np.uint64)))


# ----------------------------------------------------------------------
# sampling stationary initial points
# ----------------------------------------------------------------------

def sample_from_density(density: PiecewiseAffineFunction, count: int, seed: int) -> np.ndarray:
    """Inverse-CDF sampling from a piecewise-affine density.

    The CDF is piecewise quadratic; each cell is inverted with the
    rationalized quadratic formula, which is stable for near-zero slopes.
    """
    if count < 1:
        raise ValueError("need at least one sample")
    u = _rng(seed, _STREAM_INIT).random(count)
    bp = density.breakpoints
    widths = np.diff(bp)
    left_vals = density.slopes * bp[:-1] + density.intercepts
    cell_mass = widths * (left_vals + 0.5 * density.slopes * widths)
    cum = np.concatenate(([0.0], np.cumsum(cell_mass)))
    total = cum[-1]
    if total <= 0:
        raise ValueError("density has no mass")
    target = u * total
    idx = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, len(widths) - 1)
    delta = target - cum[idx]
    v = left_vals[idx]
    s = density.slopes[idx]
    disc = np.sqrt(np.maximum(v * v + 2.0 * s * delta, 0.0))
    denom = v + disc
    d = np.where(denom > 0, 2.0 * delta / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(bp[idx] + d, bp[0], bp[-1])


# ----------------------------------------------------------------------
# orbit engines
# ----------------------------------------------------------------------

def _dyadic_engine_params(map_: PiecewiseLinearMap):
    """Exact bit-engine parameters if every branch has slope ±2 and dyadic
    offsets/breakpoints; None otherwise."""
    lo = Fraction(map_.domain.lo)
    width = Fraction(map_.domain.hi) - lo
    thresholds = []
    negs = []
    offsets = []
    for (piece, s, c) in map_.branches:
        fs = Fraction(s)
        if fs != 2 and fs != -2:
            return None
        cu = ((fs - 1) * lo + Fraction(c)) / width
        cu_scaled = cu * _TWO64
        hi_u = (Fraction(piece.hi) - lo) / width * _TWO64
        if cu_scaled.denominator != 1 or hi_u.denominator != 1:
            return None
        negs.append(fs < 0)
        offsets.append(int(cu_scaled) % _TWO64)
        thresholds.append(int(hi_u))
    return {
        "thresholds": np.array(thresholds[:-1], dtype=np.uint64),
        "neg": np.array(negs, dtype=bool),
        "offset": np.array(offsets, dtype=np.uint64),
        "lo": map_.domain.lo,
        "width": map_.domain.hi - map_.domain.lo,
    }


class _DyadicOrbit:
    """Sliding-window orbit of a slope-±2 dyadic map, exact in distribution."""

    def __init__(self, params, inits: np.ndarray, seed: int, n_steps: int):
        self.p = params
        u0 = np.clip((inits - params["lo"]) / params["width"], 0.0, 1.0 - 2.0**-53)
        self.w = (u0 * 2.0**64).astype(np.uint64)
        self.flip = np.zeros(len(inits), dtype=np.uint64)
        blocks = max((n_steps + 63) // 64, 1)
        words = _rng(seed, _STREAM_BITS).integers(0, _TWO64, size=(blocks + 1, len(inits)), dtype=np.uint64)
        # A double carries 53 random bits; the bits below it in the window are
        # a deterministic zero block that every orbit would visit around step
        # 53..64 (a spurious excursion to the corner).  Randomize them; this
        # perturbs the initial point by less than one float ulp.
        self.w ^= words[0] & np.uint64(0x7FF)
        self.words = words[1:]
        self.k = 0

    def current(self) -> np.ndarray:
        return self.p["lo"] + self.p["width"] * (self.w.astype(np.float64) * 2.0**-64)

    def step(self):
        p = self.p
        idx = np.searchsorted(p["thresholds"], self.w, side="right")
        bit = (self.words[self.k // 64] >> np.uint64(63 - self.k % 64)) & np.uint64(1)
        bit ^= self.flip
        doubled = (self.w << np.uint64(1)) | bit
        off = p["offset"][idx]
        neg = p["neg"][idx]
        pos_val = doubled + off
        neg_val = off - doubled - np.uint64(1)
        self.w = np.where(neg, neg_val, pos_val)
        self.flip = np.where(neg, self.flip ^ np.uint64(1), self.flip)
        self.k += 1


class _FloatOrbit:
    """Plain double-precision orbit; adequate for non-dyadic slopes, where
    rounding acts as benign pseudo-orbit noise."""

    def __init__(self, map_: PiecewiseLinearMap, inits: np.ndarray):
        self.map = map_
        self.x = np.array(inits, dtype=float)

    def current(self) -> np.ndarray:
        return self.x

    def step(self):
        self.x = self.map.step(self.x)


def _make_orbit(map_: PiecewiseLinearMap, inits: np.ndarray, seed: int, n_steps: int):
    params = _dyadic_engine_params(map_)
    if params is not None:
        return _DyadicOrbit(params, inits, seed, n_steps)
    return _FloatOrbit(map_, inits)


def _evaluator(f: PiecewiseAffineFunction):
    bp, sl, ic = f.breakpoints, f.slopes, f.intercepts
    last = len(sl) - 1
    if last == 0:
        s0, c0 = sl[0], ic[0]
        return lambda x: s0 * x + c0
    inner = bp[1:-1]

    def ev(x):
        idx = np.clip(np.searchsorted(inner, x, side="right"), 0, last)
        return sl[idx] * x + ic[idx]

    return ev


# ----------------------------------------------------------------------
# partial-sum paths
# ----------------------------------------------------------------------

@dataclass
class CltSample:
    """Scaled partial-sum values w_n(t) for a batch of paths.

    paths[i, k] is n^(-1/2) times the first floor(n * t_grid[k]) observable
    values along path i's orbit; the empty sum at t < 1/n is zero.
    """

    n: int
    t_grid: np.ndarray
    paths: np.ndarray
    seed: int
    init_sampler: str

    def marginal(self, t: float) -> np.ndarray:
        k = int(np.flatnonzero(np.isclose(self.t_grid, t))[0])
        return self.paths[:, k]

    def to_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            fh.write("path_id,t,value\n")
            for i in range(self.paths.shape[0]):
                for t, v in zip(self.t_grid, self.paths[i]):
                    fh.write(f"{i},{float(t)!r},{float(v)!r}\n")


def partial_sum_paths(map_: PiecewiseLinearMap, h: Observable, n: int, t_grid,
                      inits, seed: int, init_sampler: str = "custom") -> CltSample:
    """Simulate w_n(t) = n^(-1/2) * sum of the first floor(nt) values of h
    along each orbit, at the requested grid times."""
    if n < 1:
        raise ValueError("need n >= 1")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(t_grid > 1):
        raise ValueError("grid times must lie in [0, 1]")
    inits = np.asarray(inits, dtype=float)
    if np.any(inits < map_.domain.lo) or np.any(inits > map_.domain.hi):
        raise ValueError("initial point outside the map domain")
    checkpoints = np.floor(n * t_grid + 1e-12).astype(int)
    out = np.zeros((len(inits), len(t_grid)))
    orbit = _make_orbit(map_, inits, seed, n)
    heval = _evaluator(h.f)
    scale = 1.0 / math.sqrt(n)
    by_step: dict[int, list[int]] = {}
    for col, k in enumerate(checkpoints):
        if k > 0:
            by_step.setdefault(int(k), []).append(col)
    s = np.zeros(len(inits))
    last_k = max(by_step) if by_step else 0
    for j in range(1, last_k + 1):
        s += heval(orbit.current())
        orbit.step()
        for col in by_step.get(j, ()):
            out[:, col] = s * scale
    return CltSample(n=n, t_grid=t_grid, paths=out, seed=seed, init_sampler=init_sampler)


# ----------------------------------------------------------------------
# goodness of fit
# ----------------------------------------------------------------------

@dataclass
class GofReport:
    ks_stat: float
    sample_size: int
    target: dict
    t: float
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "ks_stat": self.ks_stat,
            "sample_size": self.sample_size,
            "target": self.target,
            "t": self.t,
            "note": self.note,
        }


def ks_statistic(samples, cdf, target: dict | None = None, t: float = 1.0) -> GofReport:
    """One-sample Kolmogorov-Smirnov sup-distance against a target CDF."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 2:
        raise ValueError("need at least two samples")
    f = np.asarray(cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    stat = float(max(upper.max(), lower.max()))
    return GofReport(ks_stat=stat, sample_size=n, target=target or {}, t=t)


def mixture_normal_cdf(components, t: float, x):
    """CDF of a scale mixture of centered normals at time t:
    sum of w_i * Phi(x / sqrt(v_i * t))."""
    if t <= 0:
        raise ValueError("need t > 0")
    comps = [(float(w), float(v)) for (w, v) in components]
    if any(w < 0 for w, _ in comps):
        raise ValueError("weights must be nonnegative")
    if abs(sum(w for w, _ in comps) - 1.0) > 1e-9:
        raise ValueError("weights must sum to one")
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for w, v in comps:
        if v * t <= 0:
            out += w * (x >= 0)
        else:
            out += w * ndtr(x / math.sqrt(v * t))
    return out


def limit_law_check(sample: CltSample, profile: VarianceProfile, init_points,
                    weights=None) -> list[GofReport]:
    """KS reports of the marginals against the predicted mixture law, plus
    per-component reports conditioning each path on its initial component."""
    inits = np.asarray(init_points, dtype=float)
    if len(inits) != sample.paths.shape[0]:
        raise ValueError("one initial point per path is required")
    masks = []
    for supports, _ in profile.components:
        m = np.zeros(len(inits), dtype=bool)
        for (lo, hi) in supports:
            m |= (inits >= lo) & (inits <= hi)
        masks.append(m)
    assigned = np.zeros(len(inits), dtype=bool)
    for m in masks:
        m &= ~assigned  # points on shared boundaries count once, for the first component
        assigned |= m
    if not np.all(assigned):
        raise ValueError("some initial points lie in no component")
    if weights is None:
        weights = [float(m.mean()) for m in masks]

    reports = []
    for col, t in enumerate(sample.t_grid):
        if t <= 0:
            continue
        vals = sample.paths[:, col]
        mixture = [(w, v) for w, (_, v) in zip(weights, profile.components)]
        if all(v * t == 0 for _, v in mixture):
            reports.append(GofReport(0.0, len(vals), {"mixture": mixture}, float(t),
                                     note="degenerate limit: KS skipped"))
        else:
            reports.append(ks_statistic(
                vals, lambda x: mixture_normal_cdf(mixture, float(t), x),
                target={"mixture": mixture}, t=float(t),
            ))
        for m, (supports, v) in zip(masks, profile.components):
            if np.count_nonzero(m) < 2:
                continue
            cond = vals[m]
            if v * t == 0:
                reports.append(GofReport(0.0, len(cond), {"component": list(supports), "sigma2": v},
                                         float(t), note="degenerate component: KS skipped"))
                continue
            reports.append(ks_statistic(
                cond, lambda x: ndtr(x / math.sqrt(v * float(t))),
                target={"component": [list(s) for s in supports], "sigma2": v}, t=float(t),
            ))
    return reports


# ----------------------------------------------------------------------
# maximal inequality
# ----------------------------------------------------------------------

@dataclass
class MaximalInequalityReport:
    """Monte Carlo L2 norm of the running-maximum partial sum against the
    exact transfer-side bound sqrt(n) (3 ||f - U P f||_2 + 4 sqrt(2) Delta_q)."""

    n: int
    q: int
    lhs: float
    lhs_stderr: float
    rhs: float
    martingale_norm: float
    delta_q: float
    margin_sigmas: float
    holds: bool
    trials: int

    def to_dict(self) -> dict:
        return {
            "n": self.n, "q": self.q, "lhs": self.lhs, "lhs_stderr": self.lhs_stderr,
            "rhs": self.rhs, "martingale_norm": self.martingale_norm,
            "delta_q": self.delta_q, "margin_sigmas": self.margin_sigmas,
            "holds": self.holds, "trials": self.trials,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def dyadic_block_norms(f: Observable, transfer_action: NormalizedTransfer, q: int) -> list[float]:
    """L2(nu) norms of sum_{k=1..2^j} P_T^k f for j = 0..q-1, exact quadrature.

    Iterates are collected between dyadic marks and merged in one pass there,
    which is much cheaper than a running per-step sum."""
    from .piecewise import pw_sum

    g = transfer_action.gstar
    ginv = g.reciprocal_step(transfer_action.floor)
    v = transfer_action.weighted(f.f)
    scale = max(v.norm_l1(), 1e-300)
    running = None
    pending = []
    norms = []
    dead = False
    for j in range(q):
        if not dead:
            start = 1 if j == 0 else 2 ** (j - 1) + 1
            for _ in range(start, 2**j + 1):
                v = transfer_action.push(v).pruned()
                if v.norm_l1() <= 1e-14 * scale:
                    dead = True
                    break
                pending.append(v)
        if pending:
            running = pw_sum(([running] if running is not None else []) + pending).pruned()
            pending = []
        if running is None:
            norms.append(0.0)
        else:
            norms.append(math.sqrt(max(integrate_product([running, running, ginv]), 0.0)))
    return norms


def maximal_inequality_sweep(map_: PiecewiseLinearMap, f: Observable,
                             transfer_action: NormalizedTransfer,
                             nu: PiecewiseAffineFunction, ns, trials: int,
                             seed: int, atol: float = 1e-10) -> list[MaximalInequalityReport]:
    """maximal_inequality_check over several horizons, sharing the
    transfer-iterate pass (the block norms for every q are prefixes of one
    iterate sequence) and one orbit batch of length max(ns)."""
    ns = sorted(int(n) for n in ns)
    if ns[0] < 1:
        raise ValueError("need n >= 1")
    f.check_centered(nu)
    q_max = ns[-1].bit_length()
    norms = dyadic_block_norms(f, transfer_action, q_max)
    ptf = transfer_action(f.f)
    mart = (f.f - koopman(map_, ptf)).norm_l2(transfer_action.gstar)

    inits = sample_from_density(nu, trials, seed)
    orbit = _make_orbit(map_, inits, seed, ns[-1])
    heval = _evaluator(f.f)
    s = np.zeros(trials)
    m = np.zeros(trials)
    reports = []
    done = 0
    for n in ns:
        for _ in range(done, n):
            s += heval(orbit.current())
            np.maximum(m, np.abs(s), out=m)
            orbit.step()
        done = n
        q = n.bit_length()  # floor(log2(n)) + 1, so 2^(q-1) <= n < 2^q
        delta_q = sum(2.0 ** (-j / 2.0) * norms[j] for j in range(q))
        rhs = math.sqrt(n) * (3.0 * mart + 4.0 * math.sqrt(2.0) * delta_q)
        msq = m * m
        mean_msq = float(msq.mean())
        lhs = math.sqrt(mean_msq)
        se_msq = float(msq.std(ddof=1)) / math.sqrt(trials)
        lhs_stderr = se_msq / (2.0 * lhs) if lhs > 0 else 0.0
        margin = (rhs - lhs) / lhs_stderr if lhs_stderr > 0 else math.inf
        reports.append(MaximalInequalityReport(
            n=n, q=q, lhs=lhs, lhs_stderr=lhs_stderr, rhs=rhs,
            martingale_norm=mart, delta_q=delta_q, margin_sigmas=margin,
            holds=bool(lhs <= rhs + 3.0 * lhs_stderr + atol), trials=trials,
        ))
    return reports


def maximal_inequality_check(map_: PiecewiseLinearMap, f: Observable,
                             transfer_action: NormalizedTransfer,
                             nu: PiecewiseAffineFunction, n: int, trials: int,
                             seed: int, atol: float = 1e-10) -> MaximalInequalityReport:
    """Empirically check ||max_k |S_k|||_2 against the dyadic transfer bound.

    The left side is estimated from `trials` stationary orbits; the right
    side is computed exactly in the piecewise algebra.  `atol` absorbs
    floating-point dust when f vanishes a.e. on the invariant support and
    both sides are rounding noise.
    """
    return maximal_inequality_sweep(map_, f, transfer_action, nu, [n], trials, seed, atol)[0]
