"""Acceptance suite: one test and one printed PASS/FAIL line per criterion."""
import math
from pathlib import Path
import time

import numpy as np
import pytest
from scipy.special import zeta
from scipy.stats import binom

from hiercap.geometry import generate_placement
from hiercap.harness import (ExperimentConfig, fit_exponent, load_config, run_sweep,
                             sandwich_violations)
from hiercap.hierarchy import (build_params, classify_squarelets, geometric_params,
                               interference_series, level_regions, noise_interference_power)
from hiercap.phy import bc_beamform_trial, bc_power_mean, cross_term_mean, draw_channel
from hiercap.rates import (bernoulli_indicators, estimate_probability, fit_decay_constant,
                           hr_rate, mh_baseline, quarter_success, slow_fading_success,
                           tau_recursion, unrolled_tau0)
from hiercap.scheduling import (audit, decompose_fast, decompose_slow, orthogonality_defect,
                                random_traffic, reconstruct)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
LINES = []


def report(k, ok, detail, started):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} ({time.time() - started:.1f} s) {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


def slope(ns, ys):
    return float(np.polyfit(np.log2(ns), np.log2(ys), 1)[0])


@pytest.fixture(scope="module")
def sweeps():
    """Sweep rows shared by the sandwich, two-cluster and gap-cluster criteria."""
    out = {}
    t = time.time()
    out["quick"] = run_sweep(load_config(CONFIGS / "quick.yaml"), write=False)[0]
    out["two-cluster"] = run_sweep(load_config(CONFIGS / "two_cluster.yaml"), write=False)[0]
    for eta in (0.0, 0.25, 0.5):
        cfg = ExperimentConfig(n=[2 ** k for k in range(8, 15)], alpha=[4.0], eta=eta,
                               placements=["gap-cluster"], schemes=["CMH", "MH", "CUTSET"])
        out[eta] = run_sweep(cfg, write=False)
    out["seconds"] = time.time() - t
    return out


def test_1_dense_squarelet_counts():
    t = time.time()
    pls = [generate_placement("uniform-random", 2 ** (8 + i % 5), seed=i) for i in range(50)]
    for n in (256, 1024, 4096):
        pls.append(generate_placement("two-cluster", n))
        pls.append(generate_placement("gap-cluster", n, d_star=n ** 0.25))
    checked = bad = 0
    for gamma in (None, 64):
        for pl in pls:
            if gamma is not None and pl.n < 16 * gamma:
                continue
            p, c = build_params(pl.n, 3.0, gamma=gamma)
            pg = geometric_params(p)
            for level in range(pg.L):
                for region in level_regions(pl, pg, level):
                    r = classify_squarelets(pl, pg, c, level, region)
                    checked += 1
                    bad += not (r.dense_count >= math.ceil(c.K2 * 2.0 ** -level * pg.gamma)
                                and r.max_count <= c.K1 * pg.a_l[level] / pg.gamma)
    report(1, bad == 0 and time.time() - t < 60,
           f"{checked} region checks, {bad} violations", t)


def test_2_decomposition():
    t = time.time()
    bad = 0
    for i in range(100):
        n = (1024, 2048, 4096)[i % 3]
        pl = generate_placement("uniform-random", n, seed=100 + i)
        p, c = build_params(n, 3.0, gamma=64)
        pg = geometric_params(p)
        dense = classify_squarelets(pl, pg, c, 0)
        tr = random_traffic(np.arange(n), i)
        if i % 2:
            dec, limit = decompose_slow(tr, dense, pl, pg, c), c.K2 * pg.gamma ** 2
        else:
            dec, limit = decompose_fast(tr, dense, pl, pg, c), c.K3
        ok = (np.allclose(reconstruct(dec), tr.matrix(), rtol=0, atol=1e-12)
              and orthogonality_defect(dec) == 0
              and all(audit(dec, pl, pg, dense).values())
              and dec.n_schedules <= limit)
        bad += not ok
    report(2, bad == 0 and time.time() - t < 120,
           f"100 instances (50 fast, 50 slow), {bad} violations", t)


def test_3_phy_statistics():
    t = time.time()
    n, T = 1024, 10_000
    pl = generate_placement("uniform-random", n, seed=4)
    p, c = build_params(n, 3.0, gamma=64)
    pg = geometric_params(p)
    dense = classify_squarelets(pl, pg, c, 0)
    dec = decompose_fast(random_traffic(np.arange(n), 4), dense, pl, pg, c)
    s = dec.schedules[0]
    k = int(np.bincount(s.cells).argmax())
    pairs = s.pairs[s.cells == k]
    relays = np.sort(dense.grid.members[k])[:pg.cap(0)]
    src, dst = dec.traffic.sources[pairs], dec.traffic.destinations[pairs]
    assert pg.n_l[1] <= 64

    src_xy, rel_xy = pl.nodes[src], pl.nodes[relays]
    H = draw_channel(src_xy, rel_xy, 3.0, "fast", trials=T, rng=5).gains
    want = cross_term_mean(src_xy, rel_xy, 3.0)
    worst_cross = 0.0
    for a in range(len(src)):
        for b in range(a + 1, len(src)):
            x = np.abs(np.einsum("tv,tv->t", H[:, a].conj(), H[:, b])) ** 2
            worst_cross = max(worst_cross, abs(x.mean() - want[a, b]) / (x.std(ddof=1) / math.sqrt(T)))

    bc = bc_beamform_trial(relays, dst, pl, pg, c, 0, dense.grid.cell(k), trials=T, rng=2)
    mean = bc.power.mean(axis=0)
    se = bc.power.std(axis=0, ddof=1) / math.sqrt(T)
    power_ok = bool(np.all(mean <= bc.power_limit + 3 * se))
    exact = bc_power_mean(relays, dst, pl, pg, c, 0)
    align_ok = bool(bc.alignment.min() >= math.cos(math.pi / 4) ** 2 - 1e-12)
    ok = worst_cross <= 3 and power_ok and align_ok and time.time() - t < 300
    report(3, ok, f"cross-term worst |z|={worst_cross:.2f}, BC power max {mean.max():.4g} "
           f"<= {bc.power_limit:.4g} (exact {exact.max():.4g}), min alignment "
           f"{bc.alignment.min():.4f} over {T} trials", t)


def test_4_interference_budget():
    t = time.time()
    N0 = noise_interference_power(3.0)
    oracle = 1 + 64 * zeta(2)
    sig6 = f"{N0:.6g}" == f"{oracle:.6g}" == f"{1 + 64 * math.pi ** 2 / 6:.6g}"
    tails = []
    for m in (1, 10, 100, 1000, 10_000):
        part, tail = interference_series(3.0, m)
        tails.append(part <= N0 <= part + tail + 1e-9)
    report(4, sig6 and all(tails), f"N0(3) = {N0:.6g}, zeta oracle {oracle:.6g}, "
           f"tail bound holds at {sum(tails)}/5 cutoffs", t)


def test_5_recursion_unroll():
    t = time.time()
    worst, count = 0.0, 0
    for alpha in (2.5, 3.0, 3.5, 4.0):
        for k in range(32, 81):
            n = int(round(2 ** (k / 4)))
            p, c = build_params(n, alpha)
            it = tau_recursion(p, c).tau0
            worst = max(worst, abs(unrolled_tau0(p, c) - it) / it)
            count += 1
    report(5, worst <= 1e-9, f"{count} grid points, worst relative error {worst:.2e}", t)


def test_6_hr_exponent():
    t = time.time()
    ok, parts = True, []
    for alpha in (2.5, 3.0):
        pred = 1 - alpha / 2
        ns = [2 ** k for k in range(10, 21)]
        f = fit_exponent(ns, [hr_rate(n, alpha).rho for n in ns], pred, tolerance=0.0)
        in_band = pred - f.allowance <= f.slope <= pred
        # sliding 5-octave windows on a quarter-octave grid
        grid = [int(round(2 ** (10 + i / 4))) for i in range(41)]
        rho = np.array([hr_rate(n, alpha).rho for n in grid])
        devs, ses = [], []
        for w in range(6):
            sel = slice(4 * w, 4 * w + 21)
            fw = fit_exponent(grid[sel], rho[sel], pred, tolerance=0.0)
            devs.append(abs(fw.slope - pred))
            ses.append(fw.stderr)
        mono = all(b <= a + 2 * max(sa, sb)
                   for a, b, sa, sb in zip(devs, devs[1:], ses, ses[1:]))
        ok &= in_band and mono
        parts.append(f"alpha={alpha}: slope {f.slope:.3f} in [{pred - f.allowance:.3f}, {pred}] "
                     f"(c={f.c:.3f}), window deviations "
                     + "/".join(f"{d:.3f}" for d in devs))
    report(6, ok and time.time() - t < 120, "; ".join(parts), t)


def test_7_sandwich(sweeps):
    t = time.time()
    rows = sweeps["quick"] + sweeps["two-cluster"] + sum((sweeps[e][0] for e in (0.0, 0.25, 0.5)), [])
    checked = sum(1 for r in rows if r["scheme"] != "CUTSET" and np.isfinite(r["rho"])
                  and np.isfinite(r["bound"]))
    bad = sandwich_violations(rows)
    report(7, not bad and checked > 0,
           f"{checked} rate rows against the cut-set bound, {len(bad)} violations "
           f"(shared sweeps {sweeps['seconds']:.1f} s)", t)


def test_8_two_cluster():
    t = time.time()
    a = 4.0
    r64 = mh_baseline(generate_placement("two-cluster", 64), a)
    flags = [mh_baseline(generate_placement("two-cluster", 2 ** k), a).flags["two_cluster_bound"]
             for k in range(6, 17)]
    ns = [2 ** k for k in range(8, 17)]
    ratio = [hr_rate(n, a).rho / mh_baseline(generate_placement("two-cluster", n), a).rho
             for n in ns]
    s = slope(ns, ratio)
    ok = r64.extras["two_cluster_limit"] == 1 / 16 and all(flags) and abs(s - 1.0) <= 0.15
    report(8, ok, f"limit at n=64 is {r64.extras['two_cluster_limit']}, bottleneck "
           f"{r64.extras['single_link_nats']:.4g} nats; bound holds for {sum(flags)}/"
           f"{len(flags)} n; HR/MH growth exponent {s:.4f}", t)


def test_9_gap_interpolation(sweeps):
    t = time.time()
    ok, parts = True, []
    for eta in (0.0, 0.25, 0.5):
        fits = {f.scheme: f for f in sweeps[eta][1]}
        for scheme in ("CMH", "CUTSET"):
            f = fits[scheme]
            ok &= f.verdict
            parts.append(f"eta={eta} {scheme} {f.slope:.3f} vs {f.predicted:.3f} "
                         f"+-(0.15+{f.allowance:.3f})")
    # endpoints: multi-hop exponent -1/2 at eta = 0 and HR exponent 1 - alpha/2 at eta = 1/2
    for eta, target in ((0.0, -0.5), (0.5, -1.0)):
        f = {f.scheme: f for f in sweeps[eta][1]}["CMH"]
        end = abs(f.slope - target) <= 0.15 + f.allowance
        ok &= end
        parts.append(f"endpoint eta={eta} CMH {f.slope:.3f} vs {target}: {end}")
    report(9, ok, "; ".join(parts), t)


def test_10_slow_fading():
    t = time.time()
    T = 10_000
    z = []
    for m in (4, 8, 12, 16, 24, 32):
        p, _ = estimate_probability(quarter_success(bernoulli_indicators(0.5, m, T, rng=m)))
        want = binom.sf(math.ceil(m / 4) - 1, m, 0.5)
        z.append(abs(p - want) / math.sqrt(want * (1 - want) / T))
    K2 = build_params(1024, 3.0)[1].K2
    gammas = np.arange(200, 1700, 100)
    fail = [1 - quarter_success(bernoulli_indicators(0.5, max(1, int(K2 * g / 2)), 200_000,
                                                      rng=i)).mean()
            for i, g in enumerate(gammas)]
    K, _ = fit_decay_constant(gammas, fail)
    # physical check on a real slow-mode decomposition
    n = 1024
    pl = generate_placement("uniform-random", n, seed=1)
    p, c = build_params(n, 3.0, gamma=64)
    pg = geometric_params(p)
    dense = classify_squarelets(pl, pg, c, 0)
    dec = decompose_slow(random_traffic(np.arange(n), 1), dense, pl, pg, c, diversity=4)
    phys = slow_fading_success(dec, pl, pg, c, dense, trials=20, seed=0)
    ok = max(z) <= 3 and K > 0
    report(10, ok, f"binomial oracle worst |z|={max(z):.2f}; fitted K={K:.4g} per unit gamma; "
           f"physical quarter-success {phys['success_prob']:.3f} at D={phys['diversity']}", t)


def test_11_determinism(tmp_path):
    t = time.time()
    cfg = load_config(CONFIGS / "quick.yaml")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cfg.out = str(a)
    run_sweep(cfg)
    cfg.out, cfg.workers = str(b), 2
    run_sweep(cfg)
    same = a.read_bytes() == b.read_bytes()
    report(11, same, f"{len(a.read_bytes())} bytes, identical={same} (serial vs 2 workers)", t)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
