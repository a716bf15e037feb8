"""Command line entry point: ``hiercap {sweep,bound,phy-check,regress}``."""
import argparse
import math
import sys

import numpy as np

from .bounds import adversarial_gap_bound, converse_cut
from .errors import HierCapError
from .geometry import generate_placement
from .harness import (ExperimentConfig, compare_schemes, fit_dataset, load_config, read_csv,
                      run_sweep, sandwich_violations)
from .hierarchy import build_params, classify_squarelets, geometric_params
from .phy import bc_beamform_trial, bc_power_mean
from .scheduling import decompose_fast, random_traffic


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.trials is not None:
        cfg.trials = args.trials
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _print_fits(fits):
    print("scheme,alpha,placement,fading,slope,stderr,predicted,allowance,c,verdict")
    for f in fits:
        print(f"{f.scheme},{f.alpha},{f.placement},{f.fading},{f.slope:.4f},{f.stderr:.4f},"
              f"{f.predicted:.4f},{f.allowance:.4f},{f.c:.4f},{'pass' if f.verdict else 'FAIL'}")


def cmd_sweep(args):
    cfg = _config(args)
    rows, fits = run_sweep(cfg)
    bad = sandwich_violations(rows)
    print(f"{len(rows)} rows" + (f" written to {cfg.out}" if cfg.out else ""))
    _print_fits(fits)
    for r in bad:
        print(f"sandwich violated: n={r['n']} alpha={r['alpha']} {r['scheme']} "
              f"rho={r['rho']:.3e} > bound={r['bound']:.3e}")
    return 0 if not bad else 1


def cmd_bound(args):
    seed = 0 if args.seed is None else args.seed
    pl = generate_placement(args.placement, args.n, seed=seed,
                            d_star=args.d_star if args.placement == "gap-cluster" else None)
    tr = random_traffic(np.arange(pl.n), seed)
    rep = converse_cut(pl, args.alpha, tr)
    checks = dict(rep.bound.checks)
    print(f"converse cut x={rep.cut.position} helpers={rep.n_helpers} "
          f"crossing={rep.bound.crossing} P={rep.bound.P:.6g} G={rep.bound.G:.6g} "
          f"per_pair_bits={rep.per_node:.6g}")
    print("conditions: " + ", ".join(f"{k}={v}" for k, v in rep.conditions.items()))
    if pl.kind in ("gap-cluster", "two-cluster"):
        gb = adversarial_gap_bound(pl, args.alpha, tr)
        checks.update({f"gap_{k}": v for k, v in gb.checks.items()})
        print(f"gap cut P={gb.P:.6g} G={gb.G:.6g} per_pair_bits={gb.per_pair:.6g}")
    print("checks: " + ", ".join(f"{k}={v}" for k, v in checks.items()))
    return 0 if all(checks.values()) else 1


def cmd_phy(args):
    seed = 0 if args.seed is None else args.seed
    trials = 200 if args.trials is None else args.trials
    rng = np.random.default_rng(seed)
    pl = generate_placement("uniform-random", args.n, seed=seed)
    params, const = build_params(args.n, args.alpha, gamma=args.gamma)
    pg = geometric_params(params)
    dense = classify_squarelets(pl, pg, const, 0)
    dec = decompose_fast(random_traffic(np.arange(args.n), seed), dense, pl, pg, const)
    s = dec.schedules[0]
    k = int(np.bincount(s.cells).argmax())
    pairs = s.pairs[s.cells == k]
    relays = np.sort(dense.grid.members[k])[:pg.cap(0)]
    dst = dec.traffic.destinations[pairs]
    bc = bc_beamform_trial(relays, dst, pl, pg, const, 0, dense.grid.cell(k), trials=trials,
                           rng=rng)
    mean = bc.power.mean(axis=0)
    se = bc.power.std(axis=0, ddof=1) / math.sqrt(trials)
    exact = bc_power_mean(relays, dst, pl, pg, const, 0)
    align_ok = bool(bc.alignment.min() >= 0.5 - 1e-12)
    power_ok = bool(np.all(mean <= bc.power_limit + 3 * se))
    print(f"cell {k}: {len(pairs)} pairs, {len(relays)} relays, {trials} trials")
    print(f"min alignment {bc.alignment.min():.4f} (>= 0.5: {align_ok})")
    print(f"max mean power {mean.max():.4g} limit {bc.power_limit:.4g} exact {exact.max():.4g}"
          f" ({power_ok})")
    return 0 if align_ok and power_ok else 1


def cmd_regress(args):
    rows = read_csv(args.csv)
    fits = fit_dataset(rows, args.tolerance)
    _print_fits(fits)
    ok = all(f.verdict for f in fits)
    try:
        table, cmp = compare_schemes(rows)
        for alpha, (slope, se, verdict) in cmp.items():
            print(f"HR/MH two-cluster alpha={alpha}: growth exponent {slope:.4f} +- {se:.4f}"
                  + ("" if verdict is None else f" ({'pass' if verdict else 'FAIL'})"))
            ok &= verdict is not False
    except HierCapError:
        pass
    ok &= not sandwich_violations(rows)
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="hiercap", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output CSV path")
        sp.add_argument("--trials", type=int)

    sp = sub.add_parser("sweep", help="run a parameter sweep and write CSV rows")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bound", help="cut-set bounds of one placement")
    common(sp)
    sp.add_argument("--n", type=int, default=1024)
    sp.add_argument("--alpha", type=float, default=3.0)
    sp.add_argument("--placement", default="uniform-random")
    sp.add_argument("--d-star", type=float, default=None)
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("phy-check", help="beamforming alignment and power trials")
    common(sp)
    sp.add_argument("--n", type=int, default=1024)
    sp.add_argument("--alpha", type=float, default=3.0)
    sp.add_argument("--gamma", type=int, default=64)
    sp.set_defaults(func=cmd_phy)

    sp = sub.add_parser("regress", help="fit exponents of a sweep CSV")
    common(sp)
    sp.add_argument("csv")
    sp.add_argument("--tolerance", type=float, default=0.15)
    sp.set_defaults(func=cmd_regress)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HierCapError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
