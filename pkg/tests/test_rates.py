import math

import numpy as np
import pytest
from scipy.stats import binom

from hiercap.errors import BelowThreshold, InsufficientDiversity, NotRegular
from hiercap.geometry import generate_placement
from hiercap.hierarchy import build_params, classify_squarelets, geometric_params
from hiercap.rates import (bernoulli_indicators, cmh_rate, estimate_probability,
                           fit_decay_constant, fit_loss_constant, hr_rate, mh_baseline,
                           quarter_success, route_loads, slow_fading_success, slow_penalty,
                           tau_envelope, tau_recursion, unrolled_tau0, widest_vertical_gap)
from hiercap.scheduling import decompose_fast, decompose_slow, random_traffic


def slope(ns, ys):
    return np.polyfit(np.log2(ns), np.log2(ys), 1)[0]


def test_single_level_is_tdma():
    n, a = 1024, 3.0
    r = hr_rate(n, a, levels=0)
    N0 = build_params(n, a)[1].N0
    assert r.rho == pytest.approx(math.log2(1 + n / (2 ** a * N0 * n ** (a / 2))) / n,
                                  rel=1e-12)


@pytest.mark.parametrize("alpha", [2.5, 3.0, 4.0])
def test_unroll_matches_iteration(alpha):
    for k in range(8, 21):
        p, c = build_params(2 ** k, alpha)
        it = tau_recursion(p, c).tau0
        assert unrolled_tau0(p, c) == pytest.approx(it, rel=1e-9)


def test_recursion_positive_and_envelope():
    for k in range(10, 21, 2):
        p, c = build_params(2 ** k, 3.0)
        r = tau_recursion(p, c)
        assert np.all(r.tau > 0)
        env, K, Kt, Kp = tau_envelope(p, c)
        assert env >= r.tau0 * (1 - 1e-12)
        assert K > 0 and Kt > 0 and Kp > 0


def test_slow_penalty_factors():
    p, c = build_params(2 ** 16, 3.0)
    fast = tau_recursion(p, c)
    slow = tau_recursion(p, c, "slow")
    q, s = slow_penalty(p, c)
    assert q == 256
    assert s == max(1.0, 2 * p.gamma / c.K3)
    assert slow.tau0 == pytest.approx(fast.tau0 * q * s, rel=1e-12)
    assert slow.extras["penalty_quarter"] == q and slow.extras["penalty_share"] == s


def test_strict_threshold():
    p, c = build_params(1024, 3.0)
    r = tau_recursion(p, c)
    assert not all(r.flags.values())
    with pytest.raises(BelowThreshold):
        tau_recursion(p, c, strict=True)


def test_loss_constant_bounds_every_point():
    ns = 2.0 ** np.arange(10, 21)
    rhos = [hr_rate(int(n), 3.0).rho for n in ns]
    c = fit_loss_constant(ns, rhos, -0.5, 0.25)
    b = np.array(rhos) / ns ** -0.5
    assert np.all(b >= ns ** (-c * np.log2(ns) ** -0.25) * (1 - 1e-12))


def test_route_loads_hand():
    # one pair from (0, 0) to (2, 3) on a 4 x 4 grid: 3 east hops then 2 north hops
    L = route_loads([[0, 0]], [[2, 3]], 4)
    assert L["east"][0, :3].tolist() == [1, 1, 1] and L["east"].sum() == 3
    assert L["north"][:2, 3].tolist() == [1, 1] and L["north"].sum() == 2
    assert L["west"].sum() == L["south"].sum() == 0
    back = route_loads([[2, 3]], [[0, 0]], 4)
    assert back["west"][2, 1:4].tolist() == [1, 1, 1]
    assert back["south"][1:3, 0].tolist() == [1, 1]


def test_cmh_single_tile_is_hr():
    n = 256
    pl = generate_placement("uniform-random", n, seed=0)
    p, c = build_params(n, 3.0)
    r, g = cmh_rate(pl, 0.5, p, c, d_star=pl.side)
    assert g.n_vertices == 1
    assert r.rho == tau_recursion(p, c).rho


def test_cmh_not_regular():
    pl = generate_placement("two-cluster", 256)
    p, c = build_params(256, 4.0)
    with pytest.raises(NotRegular):
        cmh_rate(pl, 0.5, p, c, d_star=1)


def test_cmh_lattice_multihop_exponent():
    ns = [2 ** k for k in range(8, 17, 2)]
    rhos, loads = [], []
    for n in ns:
        pl = generate_placement("lattice", n)
        p, c = build_params(n, 4.0)
        r, g = cmh_rate(pl, 0.5, p, c, d_star=1)
        assert g.branch == "tdma"
        assert all(max(g.degree(i, j) for j in range(g.tiles_per_side)) <= 4
                   for i in range(g.tiles_per_side))
        rhos.append(r.rho)
        loads.append(r.extras["load_constant"])
    assert slope(ns, rhos) == pytest.approx(-0.5, abs=0.1)
    # max edge load <= K sqrt(n) d with a K that does not drift
    assert max(loads) / min(loads) < 2


def test_mh_two_cluster_64():
    pl = generate_placement("two-cluster", 64)
    r = mh_baseline(pl, 4.0)
    assert r.extras["two_cluster_limit"] == pytest.approx(1 / 16)
    assert r.flags["two_cluster_bound"]
    assert r.rho <= math.log2(1 + r.extras["g"] ** -4)


def test_mh_two_cluster_bound_holds_in_n():
    for k in range(6, 15):
        r = mh_baseline(generate_placement("two-cluster", 2 ** k), 4.0)
        assert r.flags["two_cluster_bound"]


def test_mh_lattice_exponent():
    ns = [2 ** k for k in range(8, 15, 2)]
    rhos = []
    for n in ns:
        r = mh_baseline(generate_placement("lattice", n), 3.0)
        assert r.extras["gap_width"] == pytest.approx(1.0)
        rhos.append(r.rho)
    assert slope(ns, rhos) == pytest.approx(-0.5, abs=0.1)


def test_mh_gap_shrinks_rate():
    rs = [mh_baseline(generate_placement("two-cluster", 2 ** k), 3.0).rho for k in (8, 10, 12)]
    assert rs[0] > rs[1] > rs[2]


def test_widest_gap_tie_balanced():
    cut, w = widest_vertical_gap([0, 1, 3, 5, 6, 7])
    assert w == 2 and cut == 4.0  # 3 | 3 beats 2 | 4
    cut, _ = widest_vertical_gap([0, 2, 4])
    assert cut in (1.0, 3.0)


def test_quarter_success_threshold_zero():
    ind = bernoulli_indicators(1.0, 12, 100, 5, rng=0)
    assert quarter_success(ind).all()


@pytest.mark.parametrize("m", [4, 9, 16, 30])
def test_quarter_success_binomial_oracle(m):
    T = 10_000
    ind = bernoulli_indicators(0.5, m, T, rng=m)
    p, se = estimate_probability(quarter_success(ind))
    want = binom.sf(math.ceil(m / 4) - 1, m, 0.5)
    assert abs(p - want) <= 3 * math.sqrt(want * (1 - want) / T)


def test_failure_decays_with_gamma():
    # per-relay success 1/2 and diversity D = floor(K2 gamma / 2) at level 0
    K2 = build_params(1024, 3.0)[1].K2
    gammas = np.arange(200, 1700, 100)
    fail = []
    for i, g in enumerate(gammas):
        D = max(1, int(K2 * g / 2))
        fail.append(1 - quarter_success(bernoulli_indicators(0.5, D, 200_000, rng=i)).mean())
    K, _ = fit_decay_constant(gammas, fail)
    assert K > 0


def test_decay_fit_recovers_rate():
    x = np.linspace(1, 10, 10)
    K, a = fit_decay_constant(x, 0.3 * np.exp(-0.7 * x))
    assert K == pytest.approx(0.7) and math.exp(a) == pytest.approx(0.3)


@pytest.fixture(scope="module")
def slow_instance():
    n = 1024
    pl = generate_placement("uniform-random", n, seed=1)
    p, c = build_params(n, 3.0, gamma=64)
    pg = geometric_params(p)
    dense = classify_squarelets(pl, pg, c, 0)
    tr = random_traffic(np.arange(n), 2)
    return pl, pg, c, dense, tr


def test_slow_fading_success(slow_instance):
    pl, pg, c, dense, tr = slow_instance
    dec = decompose_slow(tr, dense, pl, pg, c, diversity=4)
    out = slow_fading_success(dec, pl, pg, c, dense, trials=20, seed=0)
    assert out["diversity"] == 4
    assert 0 <= out["success_prob"] <= 1
    assert out["worst_pair"] <= out["success_prob"]
    # threshold 0 makes every relay succeed
    out0 = slow_fading_success(dec, pl, pg, c, dense, trials=5, threshold_scale=0.0)
    assert out0["success_prob"] == 1.0


def test_insufficient_diversity(slow_instance):
    pl, pg, c, dense, tr = slow_instance
    dec = decompose_slow(tr, dense, pl, pg, c, diversity=2)
    with pytest.raises(InsufficientDiversity):
        slow_fading_success(dec, pl, pg, c, dense, trials=2, required=4)
    fast = decompose_fast(tr, dense, pl, pg, c)
    with pytest.raises(InsufficientDiversity):
        slow_fading_success(fast, pl, pg, c, dense, trials=2)
