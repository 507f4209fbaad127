"""Exactness checks of the piecewise-affine algebra against brute-force
Riemann sums and hand-computed values."""

import numpy as np
import pytest

from ergclt.piecewise import PiecewiseAffineFunction as PAF
from ergclt.piecewise import integrate_product, merge_grids, pw_sum


def random_paf(rng, lo=-1.0, hi=1.0, pieces=6, step=False):
    inner = np.sort(rng.uniform(lo, hi, pieces - 1))
    bp = np.concatenate([[lo], inner, [hi]])
    slopes = np.zeros(pieces) if step else rng.normal(size=pieces)
    intercepts = rng.normal(size=pieces)
    return PAF(bp, slopes, intercepts)


def riemann(f, lo, hi, n=200001):
    x = np.linspace(lo, hi, n)
    mids = 0.5 * (x[:-1] + x[1:])
    return float(np.sum(f(mids)) * (hi - lo) / (n - 1))


def test_evaluation_conventions():
    f = PAF.step([0.0, 0.5, 1.0], [1.0, 2.0])
    assert f(0.25) == 1.0
    assert f(0.5) == 2.0  # half-open cells, value from the right
    assert f(1.0) == 2.0  # last cell closed
    assert f(-0.1) == 0.0 and f(1.1) == 0.0


def test_constructor_validation():
    with pytest.raises(ValueError):
        PAF([0.0, 0.0, 1.0], [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        PAF([0.0, 1.0], [1.0, 2.0], [0.0, 0.0])


@pytest.mark.parametrize("seed", range(5))
def test_integral_matches_riemann(seed):
    rng = np.random.default_rng(seed)
    f = random_paf(rng)
    # midpoint-rule oracle error is O(h) at each jump, so ~1e-5 here
    assert f.integral() == pytest.approx(riemann(f, -1, 1), abs=1e-4)


@pytest.mark.parametrize("nfactors", [2, 3])
def test_product_integral_matches_riemann(nfactors):
    rng = np.random.default_rng(nfactors)
    fns = [random_paf(rng) for _ in range(nfactors)]

    def prod(x):
        out = np.ones_like(x)
        for f in fns:
            out = out * f(x)
        return out

    class Prod:
        __call__ = staticmethod(prod)

    exact = integrate_product(fns)
    approx = riemann(Prod(), -1, 1, 400001)
    assert exact == pytest.approx(approx, abs=1e-4)


def test_partial_range_integration():
    f = PAF.affine(0.0, 2.0, 1.0, 0.0)  # f(x) = x
    assert integrate_product([f], 0.5, 1.5) == pytest.approx(1.0, abs=1e-14)
    assert integrate_product([f, f], 0.0, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-14)


def test_sum_and_scalar_ops():
    rng = np.random.default_rng(3)
    f, g = random_paf(rng), random_paf(rng, pieces=4)
    x = rng.uniform(-1, 1, 50)
    np.testing.assert_allclose((f + g)(x), f(x) + g(x), atol=1e-12)
    np.testing.assert_allclose((f - g)(x), f(x) - g(x), atol=1e-12)
    np.testing.assert_allclose((2.5 * f)(x), 2.5 * f(x), atol=1e-12)
    np.testing.assert_allclose(pw_sum([f, g, -f])(x), g(x), atol=1e-12)


def test_compose_affine_exact():
    rng = np.random.default_rng(4)
    f = random_paf(rng)
    for s, c in [(0.5, 0.2), (-1.5, 0.1), (2.0, -1.0)]:
        lo, hi = (-1.0 - c) / s, (1.0 - c) / s
        lo, hi = min(lo, hi), max(lo, hi)
        g = f.compose_affine(s, c, lo, hi)
        x = rng.uniform(lo, hi, 200)
        np.testing.assert_allclose(g(x), f(np.clip(s * x + c, -1, 1)), atol=1e-12)


def test_compose_branches_matches_direct():
    # tent-like two-branch map on [0, 1]
    branches = [(0.0, 0.5, 2.0, 0.0), (0.5, 1.0, -2.0, 2.0)]
    rng = np.random.default_rng(5)
    f = random_paf(rng, 0.0, 1.0)
    g = f.compose_branches(branches)
    x = rng.uniform(0, 1, 300)
    tx = np.where(x < 0.5, 2 * x, 2 - 2 * x)
    np.testing.assert_allclose(g(x), f(tx), atol=1e-12)


def test_scale_and_divide_by_step():
    rng = np.random.default_rng(6)
    f = random_paf(rng)
    w = PAF.step([-1.0, 0.0, 1.0], [2.0, 0.5])
    x = rng.uniform(-1, 1, 100)
    np.testing.assert_allclose(f.scale_by_step(w)(x), f(x) * w(x), atol=1e-12)
    q, masked = f.scale_by_step(w).divide_by_step(w)
    assert masked == 0
    np.testing.assert_allclose(q(x), f(x), atol=1e-12)


def test_divide_by_step_masks_below_floor():
    f = PAF.constant(0.0, 1.0, 3.0)
    w = PAF.step([0.0, 0.5, 1.0], [1.0, 0.0])
    q, masked = f.divide_by_step(w, floor=1e-12)
    assert masked == 1
    assert q(0.25) == 3.0 and q(0.75) == 0.0


def test_windowing():
    f = PAF.constant(-1.0, 1.0, 2.0)
    w = f.windowed(-0.25, 0.5)
    assert w(0.0) == 2.0 and w(-0.5) == 0.0 and w(0.75) == 0.0
    assert w.integral() == pytest.approx(1.5, abs=1e-14)
    wu = f.windowed_union([(-0.9, -0.5), (0.5, 0.9)])
    assert wu.integral() == pytest.approx(1.6, abs=1e-14)


def test_abs_and_norms():
    f = PAF.affine(-1.0, 1.0, 1.0, 0.0)  # f(x) = x
    assert f.abs()(-0.5) == 0.5
    assert f.norm_l1() == pytest.approx(1.0, abs=1e-14)
    assert f.norm_l2() ** 2 == pytest.approx(2.0 / 3.0, abs=1e-14)
    w = PAF.constant(-1.0, 1.0, 0.5)
    assert f.norm_l2(w) ** 2 == pytest.approx(1.0 / 3.0, abs=1e-14)


def test_pruned_merges_equal_cells():
    f = PAF(np.array([0.0, 0.3, 0.7, 1.0]), np.array([1.0, 1.0, 2.0]), np.array([0.0, 0.0, 0.0]))
    g = f.pruned()
    assert g.num_pieces == 2
    x = np.linspace(0, 1, 21)
    np.testing.assert_allclose(g(x), f(x), atol=1e-15)


def test_embed_and_merge_grids():
    f = PAF.constant(0.0, 1.0, 1.0)
    e = f.embed(-1.0, 2.0)
    assert e(-0.5) == 0.0 and e(0.5) == 1.0 and e(1.5) == 0.0
    grid = merge_grids([f, e])
    assert grid[0] == -1.0 and grid[-1] == 2.0


def test_project_step_preserves_mass():
    rng = np.random.default_rng(9)
    f = random_paf(rng)
    p = f.project_step(64)
    assert p.integral() == pytest.approx(f.integral(), abs=1e-12)


def test_sup_norm():
    f = PAF.affine(-1.0, 1.0, 2.0, 0.5)
    assert f.sup_norm() == pytest.approx(2.5, abs=1e-15)
