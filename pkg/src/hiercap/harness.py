"""Experiment driver: configuration, sweeps, exponent fits and scheme comparison."""
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field
import io
import math
import multiprocessing

import numpy as np
from scipy.stats import linregress
import yaml

from . import __version__
from .bounds import adversarial_gap_bound, converse_cut
from .errors import HierCapError, InvalidParameter, MissingScheme
from .geometry import generate_placement, regularity_resolution
from .hierarchy import build_params, classify_squarelets, geometric_params
from .rates import cmh_rate, mh_baseline, slow_fading_success, tau_recursion
from .scheduling import audit, decompose_fast, decompose_slow, random_traffic

COLUMNS = ["n", "alpha", "delta", "mu", "placement", "scheme", "fading", "rho", "tau0",
           "bound", "d_star", "success_prob", "error"]
PROVENANCE = ["seed", "version", "thresholds"]
SCHEMES = ("HR", "CMH", "MH", "CUTSET")
PLACEMENT_SCHEMES = {"CMH", "MH", "CUTSET"}


@dataclass
class ExperimentConfig:
    """Sweep description.

    ``bound_ceiling`` caps n for the exact cut sums (and hence for every
    placement-based scheme); ``phy_ceiling`` caps n for the decomposition
    and slow-fading trials, which use branching factor ``phy_gamma``.
    ``eta`` sets d* = n^eta for gap-cluster placements.
    """

    n: list = field(default_factory=lambda: [2 ** k for k in range(10, 15)])
    alpha: list = field(default_factory=lambda: [3.0])
    delta: float = 0.25
    mu: float = 0.5
    delta2: float = 0.5
    placements: list = field(default_factory=lambda: ["uniform-random"])
    fading: list = field(default_factory=lambda: ["fast"])
    schemes: list = field(default_factory=lambda: ["HR", "CUTSET"])
    seeds: list = field(default_factory=lambda: [0])
    trials: int = 20
    eta: float = 0.25
    n_ceiling: int = 2 ** 20
    bound_ceiling: int = 2 ** 14
    phy_ceiling: int = 2 ** 12
    phy_gamma: int = 64
    tolerance: float = 0.15
    workers: int = 1
    out: str = None

    def __post_init__(self):
        self.n = [int(v) for v in self.n]
        self.alpha = [float(a) for a in self.alpha]
        self.seeds = [int(s) for s in self.seeds]
        if not self.n or min(self.n) < 16 or max(self.n) > self.n_ceiling:
            raise InvalidParameter(f"n values must lie in [16, {self.n_ceiling}]")
        if any(a <= 2 for a in self.alpha):
            raise InvalidParameter("alpha values must exceed 2")
        if not 0 < self.delta < 0.5:
            raise InvalidParameter("delta must lie in (0, 1/2)")
        if not 0 < self.mu < 1:
            raise InvalidParameter("mu must lie in (0, 1)")
        if not 0 < self.delta2 < 1:
            raise InvalidParameter("Delta^2 must lie in (0, 1)")
        bad = set(self.schemes) - set(SCHEMES)
        if bad:
            raise InvalidParameter(f"unknown schemes {sorted(bad)}")
        if set(self.fading) - {"fast", "slow"}:
            raise InvalidParameter("fading modes are 'fast' and 'slow'")
        if self.trials < 1 or self.workers < 1:
            raise InvalidParameter("trials and workers must be positive")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidParameter(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def load_config(path):
    """Read an ExperimentConfig from a YAML (or JSON) file."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise InvalidParameter("config must be a mapping")
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------- sweep

def _placement(kind, n, eta, seed):
    if kind == "gap-cluster":
        side = math.sqrt(n)
        return generate_placement(kind, n, seed=seed, d_star=min(max(1.0, n ** eta), side / 2))
    return generate_placement(kind, n, seed=seed)


def _phy_diagnostics(placement, alpha, fading, cfg, traffic, seed):
    """Level-0 decomposition audit and, in slow fading, the quarter-success estimate."""
    n = placement.n
    params, const = build_params(n, alpha, cfg.delta, delta2=cfg.delta2, gamma=cfg.phy_gamma)
    pg = geometric_params(params)
    dense = classify_squarelets(placement, pg, const, 0)
    flags = [] if dense.counts_ok else ["dense-count"]
    if fading == "slow":
        dec = decompose_slow(traffic, dense, placement, pg, const)
    else:
        dec = decompose_fast(traffic, dense, placement, pg, const)
    flags += [f"audit:{k}" for k, v in audit(dec, placement, pg, dense).items() if not v]
    prob = float("nan")
    if fading == "slow":
        prob = slow_fading_success(dec, placement, pg, const, dense, cfg.trials, seed)["success_prob"]
    return prob, flags


def _rows_for(task):
    """All rows of one (n, alpha, placement kind, seed) sweep point."""
    cfg, n, alpha, kind, seed = task
    base = {"n": n, "alpha": alpha, "delta": cfg.delta, "mu": cfg.mu, "placement": kind,
            "seed": seed, "version": __version__}
    rows = []
    placement = traffic = None
    bound, d_star, cut_x, pl_err = math.nan, math.nan, None, ""
    needs_pl = bool(PLACEMENT_SCHEMES & set(cfg.schemes)) or n <= cfg.phy_ceiling
    if needs_pl and n <= cfg.bound_ceiling:
        try:
            placement = _placement(kind, n, cfg.eta, seed)
            traffic = random_traffic(np.arange(n), seed)
            d_star = regularity_resolution(placement, cfg.mu).d_star
            conv = converse_cut(placement, alpha, traffic)
            bound, cut_x = conv.per_node, conv.cut.position
            if kind in ("gap-cluster", "two-cluster"):
                bound = min(bound, adversarial_gap_bound(placement, alpha, traffic).per_pair)
        except HierCapError as e:
            pl_err = e.code
    params, const = build_params(n, alpha, cfg.delta, delta2=cfg.delta2)

    for fading in cfg.fading:
        phy_prob, phy_flags = math.nan, []
        if placement is not None and "HR" in cfg.schemes and n <= cfg.phy_ceiling \
                and n >= 4 * cfg.phy_gamma:
            try:
                phy_prob, phy_flags = _phy_diagnostics(placement, alpha, fading, cfg,
                                                       traffic, seed)
            except HierCapError as e:
                phy_flags = [f"phy:{e.code}"]
        for scheme in cfg.schemes:
            row = dict(base, scheme=scheme, fading=fading, rho=math.nan, tau0=math.nan,
                       bound=bound, d_star=math.nan if scheme == "HR" else d_star,
                       success_prob=math.nan, error="", thresholds="")
            flags = []
            try:
                if scheme == "HR":
                    rep = tau_recursion(params, const, fading)
                    flags = [k for k, v in rep.flags.items() if not v] + phy_flags
                    row.update(rho=rep.rho, tau0=rep.tau0, success_prob=phy_prob)
                elif placement is None:
                    row["error"] = pl_err or "n-above-ceiling"
                elif scheme == "CMH":
                    rep, _ = cmh_rate(placement, cfg.mu, params, const, traffic, d_star, fading=fading)
                    row.update(rho=rep.rho, tau0=rep.tau0, d_star=rep.d_star)
                    flags = [k for k, v in rep.flags.items() if not v]
                elif scheme == "MH":
                    rep = mh_baseline(placement, alpha, traffic,
                                      extra_cuts=() if cut_x is None else (cut_x,))
                    row.update(rho=rep.rho, tau0=rep.tau0)
                    flags = [k for k, v in rep.flags.items() if not v]
                elif scheme == "CUTSET":
                    row.update(rho=bound, tau0=1.0 / bound if bound else math.nan)
            except HierCapError as e:
                row["error"] = e.code
            row["thresholds"] = ";".join(flags)
            rows.append(row)
    return rows


def sort_key(row):
    return (row["n"], row["alpha"], row["scheme"], row["placement"], row["fading"], row["seed"])


def run_sweep(cfg, write=True):
    """Evaluate every sweep point and fit exponents.

    Returns (rows, fits). Rows are sorted by (n, alpha, scheme, placement,
    fading, seed); with ``write`` and ``cfg.out`` set they are written as CSV.
    """
    tasks = [(cfg, n, a, kind, s) for n in cfg.n for a in cfg.alpha
             for kind in cfg.placements for s in cfg.seeds]
    if cfg.workers > 1:
        # numba's OpenMP runtime does not survive fork()
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(cfg.workers, mp_context=ctx) as ex:
            chunks = list(ex.map(_rows_for, tasks))
    else:
        chunks = [_rows_for(t) for t in tasks]
    rows = sorted((r for c in chunks for r in c), key=sort_key)
    if write and cfg.out:
        write_csv(rows, cfg.out)
    return rows, fit_dataset(rows, cfg.tolerance)


def sandwich_violations(rows):
    """Rows whose rate exceeds the cut-set bound of the same placement and traffic."""
    out = []
    for r in rows:
        rho, b = float(r["rho"]), float(r["bound"])
        if r["scheme"] != "CUTSET" and np.isfinite(rho) and np.isfinite(b) and rho > b:
            out.append(r)
    return out


# ------------------------------------------------------------------ CSV

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS + PROVENANCE)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS + PROVENANCE])
    return buf.getvalue()


def write_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))


def read_csv(path):
    """Rows of a sweep CSV with numeric columns converted to float."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for c in ("alpha", "delta", "mu", "rho", "tau0", "bound", "d_star", "success_prob"):
            r[c] = float(r[c])
        r["n"] = int(r["n"])
        r["seed"] = int(r.get("seed", 0) or 0)
    return rows


# ----------------------------------------------------------- regression

@dataclass
class ExponentFit:
    """Log-log fit of rho against n.

    ``allowance`` = c log2^(delta-1/2)(n_max), with c the fitted loss constant
    of the points around the clean law; ``verdict`` is
    |slope - predicted| <= tolerance + allowance.
    """

    scheme: str
    alpha: float
    placement: str
    fading: str
    slope: float
    stderr: float
    intercept: float
    predicted: float
    c: float
    allowance: float
    tolerance: float
    n_points: int
    n_max: int
    verdict: bool

    def as_dict(self):
        return asdict(self)


def loss_constant(ns, values, reference, delta):
    """Smallest c with |log2(value/reference)| <= c log2^(1/2+delta) n at every point."""
    ns = np.asarray(ns, dtype=float)
    dev = np.abs(np.log2(np.asarray(values, dtype=float) / np.asarray(reference, dtype=float)))
    return float(np.max(dev / np.log2(ns) ** (0.5 + delta)))


def fit_exponent(ns, rhos, predicted, delta=0.25, tolerance=0.15, reference=None,
                 scheme="", alpha=math.nan, placement="", fading=""):
    """Fit log2 rho = slope log2 n + intercept and judge it against ``predicted``.

    ``reference`` is the clean law evaluated at ``ns`` (defaults to
    n^predicted) used to fit the loss constant c.
    """
    ns = np.asarray(ns, dtype=float)
    rhos = np.asarray(rhos, dtype=float)
    ok = np.isfinite(rhos) & (rhos > 0)
    ns, rhos = ns[ok], rhos[ok]
    if len(np.unique(ns)) < 4:
        raise InvalidParameter("an exponent fit needs at least 4 distinct n")
    if reference is None:
        reference = ns ** predicted
    else:
        reference = np.asarray(reference, dtype=float)[ok]
    res = linregress(np.log2(ns), np.log2(rhos))
    c = loss_constant(ns, rhos, reference, delta)
    allow = c * math.log2(ns.max()) ** (delta - 0.5)
    verdict = abs(res.slope - predicted) <= tolerance + allow
    return ExponentFit(scheme, float(alpha), placement, fading, float(res.slope),
                       float(res.stderr), float(res.intercept), float(predicted), c, allow,
                       tolerance, len(ns), int(ns.max()), bool(verdict))


def predicted_exponent(scheme, alpha, placement, ns=None, d_star=None):
    """Clean exponent of a scheme and, when d* is involved, its reference law.

    Returns (exponent, reference values or None).
    """
    if scheme == "HR" or scheme == "CUTSET" and placement != "gap-cluster":
        return 1 - alpha / 2, None
    if scheme == "MH":
        return (-alpha / 2, None) if placement == "two-cluster" else (-0.5, None)
    # d*-dependent law d*^(3-alpha) n^(-1/2), slope taken from the realized d*
    ns = np.asarray(ns, dtype=float)
    d = np.asarray(d_star, dtype=float)
    ref = d ** (3 - alpha) * ns ** -0.5
    ok = np.isfinite(ref)
    slope = linregress(np.log2(ns[ok]), np.log2(ref[ok])).slope
    return float(slope), ref


def fit_dataset(rows, tolerance=0.15):
    """ExponentFit per (scheme, alpha, placement, fading), averaging over seeds."""
    groups = {}
    for r in rows:
        if r["error"] or not np.isfinite(float(r["rho"])):
            continue
        key = (r["scheme"], float(r["alpha"]), r["placement"], r["fading"])
        groups.setdefault(key, []).append(r)
    fits = []
    for (scheme, alpha, placement, fading), rs in sorted(groups.items()):
        ns = sorted({r["n"] for r in rs})
        if len(ns) < 4:
            continue
        rho = [np.exp(np.mean([np.log(r["rho"]) for r in rs if r["n"] == n])) for n in ns]
        delta = float(rs[0]["delta"])
        d_star = None
        if scheme == "CMH" or scheme == "CUTSET" and placement == "gap-cluster":
            d_star = [_d_star_of(rows, n, alpha, placement) for n in ns]
        pred, ref = predicted_exponent(scheme, alpha, placement, ns, d_star)
        fits.append(fit_exponent(ns, rho, pred, delta, tolerance, ref, scheme, alpha,
                                 placement, fading))
    return fits


def _d_star_of(rows, n, alpha, placement):
    for r in rows:
        if r["n"] == n and float(r["alpha"]) == alpha and r["placement"] == placement \
                and np.isfinite(float(r["d_star"])):
            return float(r["d_star"])
    return math.nan


def compare_schemes(rows, num="HR", den="MH", placement="two-cluster", tolerance=0.15):
    """Ratio rho^num / rho^den per (alpha, n) and its fitted growth exponent.

    Returns (table, fits) where table rows are (alpha, n, ratio) and fits maps
    alpha to (slope, stderr, verdict). The verdict asks for slope 1 within the
    tolerance when alpha > 3 and is None otherwise.
    """
    have = {r["scheme"] for r in rows if r["placement"] == placement}
    for s in (num, den):
        if s not in have:
            raise MissingScheme(f"no {s} rows on {placement} placements")

    def mean_rho(scheme, alpha, n):
        v = [float(r["rho"]) for r in rows if r["scheme"] == scheme and r["n"] == n
             and float(r["alpha"]) == alpha and r["placement"] == placement
             and r["fading"] == "fast" and not r["error"]]
        return float(np.exp(np.mean(np.log(v)))) if v else math.nan

    table, fits = [], {}
    for alpha in sorted({float(r["alpha"]) for r in rows}):
        ns = sorted({r["n"] for r in rows if float(r["alpha"]) == alpha})
        ratios = [mean_rho(num, alpha, n) / mean_rho(den, alpha, n) for n in ns]
        table += [(alpha, n, q) for n, q in zip(ns, ratios)]
        ok = [i for i, q in enumerate(ratios) if np.isfinite(q) and q > 0]
        if len(ok) >= 2:
            res = linregress(np.log2([ns[i] for i in ok]), np.log2([ratios[i] for i in ok]))
            verdict = abs(res.slope - 1.0) <= tolerance if alpha > 3 else None
            fits[alpha] = (float(res.slope), float(res.stderr), verdict)
    return table, fits
