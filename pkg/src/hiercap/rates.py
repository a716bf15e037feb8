"""End-to-end rates: hierarchical relaying (HR), cooperative multi-hop (CMH),
the multi-hop (MH) baseline and slow-fading relay diversity.

Rates are in bits per channel use per node; tau values are channel uses per
bit.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.spatial import cKDTree

from .errors import BelowThreshold, InsufficientDiversity, NotRegular
from .geometry import build_grid, is_regular, regularity_resolution
from .hierarchy import build_params, power_condition
from .phy import bc_beamform_trial, mac_sinr_trial, quantizer_cost
from .scheduling import random_traffic

SLOW_QUARTER_PENALTY = 256.0


@dataclass
class RateReport:
    """Rate of one scheme on one instance.

    ``b`` is the loss factor rho / (clean power law) where the clean law is
    n^(1-alpha/2) for HR and d*^(3-alpha) n^-1/2 for CMH.
    """

    scheme: str
    n: int
    alpha: float
    delta: float
    rho: float
    tau0: float = float("nan")
    fading: str = "fast"
    mu: float = float("nan")
    d_star: float = float("nan")
    success_prob: float = float("nan")
    b: float = float("nan")
    tau: np.ndarray = None
    extras: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)


# ------------------------------------------------------------------- HR

def level_terms(params, const):
    """Direct terms A_l, multipliers c_l (l < L) and the TDMA term tau_L."""
    n, a, L, g = params.n, params.alpha, params.L, params.gamma
    Kt = 8.0 * const.K3 * (1.0 / const.K4 + 1.0 / const.K6)
    A = np.array([Kt * n ** (a / 2 - 1) * g * (4.0 * g ** (1 - a / 2)) ** ell
                  for ell in range(L)])
    c = np.array([const.K5 + quantizer_cost("bc", params, const, ell) for ell in range(L)])
    nL, aL = params.n_l[L], params.a_l[L]
    tauL = nL / math.log2(1.0 + nL / (2.0 ** a * const.N0 * aL ** (a / 2)))
    return A, c, tauL


def slow_penalty(params, const):
    """(quarter-relay factor, time-sharing factor) applied to tau_0 under slow fading."""
    share = max(1.0, 2.0 * params.gamma / const.K3)
    return SLOW_QUARTER_PENALTY, share


def threshold_flags(params, const):
    """Conditions the analysis needs for large n, evaluated at this n."""
    flags = {}
    pc = power_condition(params, const)
    flags["power_condition"] = bool(np.all(pc))
    if params.L > 0:
        need = const.K2 * 2.0 ** (-np.arange(params.L) - 1) * params.gamma
        flags["eligible_relays_50"] = bool(np.all(need >= 50))
        flags["dense_count_positive"] = bool(const.K2 * 2.0 ** -(params.L - 1) * params.gamma >= 1)
    return flags


def tau_recursion(params, const, fading="fast", strict=False):
    """Evaluate tau_l from the TDMA termination up to tau_0.

    tau_l = A_l + c_l tau_{l+1}, with A_l the MAC+BC channel uses at level l
    and c_l = K5 + bc quantizer cost. Slow fading multiplies tau_0 by the
    two factors of :func:`slow_penalty`.
    """
    A, c, tauL = level_terms(params, const)
    tau = np.empty(params.L + 1)
    tau[params.L] = tauL
    for ell in range(params.L - 1, -1, -1):
        tau[ell] = A[ell] + c[ell] * tau[ell + 1]
    flags = threshold_flags(params, const)
    if strict and not all(flags.values()):
        bad = [k for k, v in flags.items() if not v]
        raise BelowThreshold(f"n={params.n} below threshold: {', '.join(bad)}")
    tau0 = tau[0]
    extras = {"A": A, "c": c, "tau_L": tauL, "L": params.L, "gamma": params.gamma}
    if fading == "slow":
        q, s = slow_penalty(params, const)
        tau0 = tau0 * q * s
        extras.update(penalty_quarter=q, penalty_share=s)
    rho = 1.0 / tau0
    b = rho / params.n ** (1 - params.alpha / 2)
    return RateReport("HR", params.n, params.alpha, params.delta, rho, tau0, fading,
                      b=b, tau=tau, extras=extras, flags=flags)


def unrolled_tau0(params, const):
    """tau_0 = sum_l A_l prod_{j<l} c_j + prod_j c_j tau_L (explicit expansion)."""
    A, c, tauL = level_terms(params, const)
    prefix = np.concatenate([[1.0], np.cumprod(c)])
    return float(np.sum(A * prefix[:-1]) + prefix[-1] * tauL)


def tau_envelope(params, const):
    """Envelope n^(a/2-1) (K L log n)^L (K~ 4^L gamma + K' n gamma^-L) >= tau_0.

    K = max_l c_l / (L log2 n), K~ = 8 K3 (1/K4 + 1/K6) and
    K' = tau_L / (n^(a/2) gamma^-L). Returns (envelope, K, K~, K').
    """
    n, a, L, g = params.n, params.alpha, params.L, params.gamma
    A, c, tauL = level_terms(params, const)
    Kt = 8.0 * const.K3 * (1.0 / const.K4 + 1.0 / const.K6)
    Kp = tauL / (n ** (a / 2) * float(g) ** -L)
    if L == 0:
        return Kp * n ** (a / 2), float("nan"), Kt, Kp
    K = c.max() / (L * math.log2(n))
    env = n ** (a / 2 - 1) * (K * L * math.log2(n)) ** L * (Kt * 4.0 ** L * g + Kp * n * float(g) ** -L)
    return env, K, Kt, Kp


def hr_rate(n, alpha, delta=0.25, r_min=0.5, delta2=0.5, fading="fast",
            extra_noise=0.0, **overrides):
    """Per-node HR rate for n nodes (analytic path)."""
    params, const = build_params(n, alpha, delta, r_min, delta2, extra_noise=extra_noise,
                                 **overrides)
    return tau_recursion(params, const, fading)


def fit_loss_constant(ns, rhos, clean_exponent, delta, scale=None):
    """Smallest c with rho >= clean * n^(-c log2^(delta-1/2) n) on every point.

    ``scale`` replaces the clean law n^clean_exponent (e.g. d*^(3-a) n^-1/2).
    """
    ns = np.asarray(ns, dtype=float)
    ref = ns ** clean_exponent if scale is None else np.asarray(scale, dtype=float)
    b = np.asarray(rhos, dtype=float) / ref
    c = -np.log2(b) / np.log2(ns) ** (0.5 + delta)
    return float(max(c.max(), 0.0))


# ------------------------------------------------------------------ CMH

@dataclass
class GridGraph:
    """Tile graph of the cooperative multi-hop scheme.

    ``loads`` maps a direction ('east', 'west', 'north', 'south') to an array
    of directed edge loads; entry (r, c) is the edge leaving tile (r, c).
    """

    tiles_per_side: int
    d: float
    capacity: float
    loads: dict
    max_load: int
    intra_max: int
    branch: str

    @property
    def n_vertices(self):
        return self.tiles_per_side ** 2

    def degree(self, r, c):
        m = self.tiles_per_side
        return sum(0 <= r + dr < m and 0 <= c + dc < m
                   for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)))


def route_loads(src_tile, dst_tile, m):
    """Directed edge loads of row-first, column-second routing on an m x m grid.

    Tiles are (row, col) pairs. A pair first moves along its source row to
    the destination column, then along that column to the destination row.
    """
    src_tile = np.asarray(src_tile)
    dst_tile = np.asarray(dst_tile)
    loads = {k: np.zeros((m, m), dtype=int) for k in ("east", "west", "north", "south")}

    def seg(line, a, b, fwd, bwd, horizontal):
        # edges a->a+1 ... b-1->b (fwd) or a->a-1 ... (bwd), via difference arrays
        diff_f = np.zeros((m, m + 1), dtype=int)
        diff_b = np.zeros((m, m + 1), dtype=int)
        up = b > a
        np.add.at(diff_f, (line[up], a[up]), 1)
        np.add.at(diff_f, (line[up], b[up]), -1)
        dn = b < a
        np.add.at(diff_b, (line[dn], b[dn] + 1), 1)
        np.add.at(diff_b, (line[dn], a[dn] + 1), -1)
        f = np.cumsum(diff_f, axis=1)[:, :m]
        bk = np.cumsum(diff_b, axis=1)[:, :m]
        if horizontal:
            loads[fwd] += f
            loads[bwd] += bk
        else:
            loads[fwd] += f.T
            loads[bwd] += bk.T

    # horizontal leg in the source row
    seg(src_tile[:, 0], src_tile[:, 1], dst_tile[:, 1], "east", "west", True)
    # vertical leg in the destination column
    seg(dst_tile[:, 1], src_tile[:, 0], dst_tile[:, 0], "north", "south", False)
    return loads


def cmh_threshold(n, alpha, delta):
    """Resolution n^((1/(2+alpha)) log2^(delta-1/2) n) separating the two regimes."""
    return n ** (math.log2(n) ** (delta - 0.5) / (2.0 + alpha))


def cmh_rate(placement, mu, params, const, traffic=None, d_star=None, seed=0,
             fading="fast"):
    """Cooperative multi-hop rate over tiles of sidelength d*.

    Each hop between adjacent tiles runs HR inside a 2d x 2d square (large
    d*) or single-link TDMA (small d*). Edge capacity counts pair-flows per
    channel use and includes the factor 1/16 from time sharing between the
    4 square subsets, the 2 traffic directions and the 2 partitions.
    """
    n, a, delta = placement.n, params.alpha, params.delta
    if d_star is None:
        d = regularity_resolution(placement, mu).d_star
    else:
        d = float(d_star)
        if not is_regular(placement, mu, d):
            raise NotRegular(f"placement is not {mu}-regular at resolution {d}")
    m = int(round(placement.side / d))
    if traffic is None:
        traffic = random_traffic(np.arange(n), seed)
    h0 = cmh_threshold(n, a, delta)
    extras = {"threshold": h0, "tiles_per_side": m}
    if m <= 1:
        hr = tau_recursion(params, const, fading)
        g = GridGraph(1, d, float("inf"), {}, 0, n, "single-tile")
        extras["branch"] = "single-tile"
        return RateReport("CMH", n, a, delta, hr.rho, hr.tau0, fading, mu, d,
                          b=hr.rho / (d ** (3 - a) * n ** -0.5), extras=extras,
                          flags=hr.flags), g

    n_big = int(math.floor(4 * mu * d * d + 1e-9))
    if d >= h0 and n_big >= 16:
        branch = "hr"
        local = hr_rate(n_big, a, delta, const.r_min, const.delta2, fading,
                        extra_noise=const.N0 - 1.0)
        per_node = local.rho
        extras["n_big"] = n_big
        extras["local_rho"] = per_node
        capacity = mu * d * d * per_node / 16.0
    else:
        branch = "tdma"
        capacity = math.log2(1.0 + (3.0 * d) ** -a / const.N0) / 16.0

    grid = build_grid(placement, m)
    tile = grid.cell_of[np.argsort(grid.node_ids)]          # tile of every node
    src, dst = tile[traffic.sources], tile[traffic.destinations]
    st = np.column_stack(divmod(src, m))
    dt = np.column_stack(divmod(dst, m))
    loads = route_loads(st, dt, m)
    max_load = int(max(v.max() for v in loads.values()))
    same = src == dst
    intra = int(np.bincount(src[same], minlength=m * m).max()) if same.any() else 0
    rho = math.inf
    if max_load:
        rho = capacity / max_load
    if intra:
        rho = min(rho, capacity / intra)
    gg = GridGraph(m, d, capacity, loads, max_load, intra, branch)
    extras.update(branch=branch, max_load=max_load, capacity=capacity,
                  load_constant=max_load / (math.sqrt(n) * d))
    return RateReport("CMH", n, a, delta, rho, 1.0 / rho, fading, mu, d,
                      b=rho / (d ** (3 - a) * n ** -0.5), extras=extras), gg


# ------------------------------------------------------------------- MH

def widest_vertical_gap(xs):
    """Cut position in the middle of the widest empty vertical strip.

    Ties go to the most balanced split. Returns (cut_x, width).
    """
    u = np.unique(np.round(np.asarray(xs, dtype=float), 12))
    if len(u) < 2:
        return None, 0.0
    gaps = np.diff(u)
    widest = gaps.max()
    cand = np.flatnonzero(gaps >= widest - 1e-9)
    xs = np.sort(xs)
    best, score = None, None
    for i in cand:
        cut = 0.5 * (u[i] + u[i + 1])
        left = np.searchsorted(xs, cut)
        s = abs(2 * left - len(xs))
        if score is None or s < score:
            best, score = cut, s
    return float(best), float(widest)


def _cut_bottleneck(pts, left, traffic, alpha):
    """Single-link and matching bottlenecks of one cut."""
    L, R = np.flatnonzero(left), np.flatnonzero(~left)
    dl, _ = cKDTree(pts[R]).query(pts[L], k=1)
    dr, _ = cKDTree(pts[L]).query(pts[R], k=1)
    g = float(dl.min())
    single = math.log2(1.0 + g ** -alpha)
    match = min(float(np.sum(np.log2(1.0 + dl ** -alpha))),
                float(np.sum(np.log2(1.0 + dr ** -alpha))))
    sl = left[traffic.sources]
    dl_side = left[traffic.destinations]
    fwd = int(np.sum(sl & ~dl_side))
    back = int(np.sum(~sl & dl_side))
    rho = single
    for k in (fwd, back):
        if k:
            rho = min(rho, match / k)
    return rho, {"g": g, "single_link_bits": single, "single_link_nats": math.log1p(g ** -alpha),
                 "matching": match, "crossing_pairs": fwd, "reverse_pairs": back}


def mh_baseline(placement, alpha, traffic=None, seed=0, extra_cuts=()):
    """Upper bound on the per-pair rate of multi-hop across the widest gap.

    Two bottlenecks are combined: the strongest single link crossing the cut,
    log2(1 + g^-alpha), and the sum over the nodes on one side of their best
    crossing link divided by the number of pairs that must cross. Vertical
    cuts at the x positions in ``extra_cuts`` are evaluated as well and the
    smallest value is kept.
    """
    pts = placement.nodes
    axis = 0
    cut, width = widest_vertical_gap(pts[:, 0])
    if cut is None:
        axis = 1
        cut, width = widest_vertical_gap(pts[:, 1])
    if traffic is None:
        traffic = random_traffic(np.arange(placement.n), seed)
    rho, extras = _cut_bottleneck(pts, pts[:, axis] < cut, traffic, alpha)
    extras.update(cut=cut, gap_width=width)
    for x in extra_cuts:
        left = pts[:, 0] < x
        if left.any() and not left.all():
            r, _ = _cut_bottleneck(pts, left, traffic, alpha)
            rho = min(rho, r)
    n = placement.n
    flags = {}
    if placement.kind == "two-cluster":
        lim = 4.0 ** alpha * n ** (-alpha / 2)
        extras["two_cluster_limit"] = lim
        flags["two_cluster_bound"] = extras["single_link_nats"] <= lim
    return RateReport("MH", n, alpha, float("nan"), rho, 1.0 / rho, "fast",
                      extras=extras, flags=flags)


# ---------------------------------------------------------- slow fading

def quarter_success(indicators, diversity=None):
    """Per-trial, per-pair event 'at least a quarter of the D relays succeed'.

    ``indicators`` has shape (trials, pairs, D). Returns a boolean array of
    shape (trials, pairs).
    """
    ind = np.asarray(indicators, dtype=bool)
    D = ind.shape[-1] if diversity is None else diversity
    return ind.sum(axis=-1) >= math.ceil(D / 4.0 - 1e-12)


def estimate_probability(events):
    """Mean of a boolean array and its binomial standard error."""
    ev = np.asarray(events, dtype=float).ravel()
    p = float(ev.mean())
    return p, math.sqrt(max(p * (1 - p), 0.0) / len(ev))


def bernoulli_indicators(p, D, trials, pairs=1, rng=None):
    """Independent per-relay success indicators with probability p."""
    rng = np.random.default_rng(rng)
    return rng.random((trials, pairs, D)) < p


def fit_decay_constant(x, fail):
    """K of log P_fail ~ a - K x by least squares (zero probabilities dropped)."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(fail, dtype=float)
    keep = f > 0
    if keep.sum() < 2:
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(x[keep], np.log(f[keep]), 1)
    return float(-slope), float(icpt)


def relay_event_indicators(decomp, placement, params, const, dense, trials=200,
                           seed=0, threshold_scale=1.0 / 64):
    """Physical success indicators for every (trial, pair, relay) of a slow decomposition.

    Each trial is an independent slow-fading session: one phase draw per
    link. A relay succeeds for a pair when both its MAC and BC rates reach
    ``threshold_scale`` times the fast-fading floors K4 and K6.
    """
    tr = decomp.traffic
    D = decomp.diversity
    out = np.zeros((trials, tr.n_pairs, D), dtype=bool)
    slot = np.zeros(tr.n_pairs, dtype=int)
    rng = np.random.default_rng(seed)
    level = decomp.level
    nrel = params.cap(level)
    for s in decomp.schedules:
        for k in np.unique(s.cells):
            pairs = s.pairs[s.cells == k]
            relays = np.sort(dense.grid.members[k])[:nrel]
            cell = dense.grid.cell(k)
            sinr_m, _, _ = mac_sinr_trial(tr.sources[pairs], relays, placement, params,
                                          const, level, cell, trials=trials, rng=rng)
            bc = bc_beamform_trial(relays, tr.destinations[pairs], placement, params,
                                   const, level, cell, trials=trials, rng=rng)
            ok = ((0.5 * np.log2(1 + sinr_m) >= threshold_scale * const.K4)
                  & (0.5 * np.log2(1 + bc.sinr) >= threshold_scale * const.K6))
            out[:, pairs, slot[pairs]] = ok
        slot[s.pairs] += 1
    return out


def slow_fading_success(decomp, placement, params, const, dense, trials=200, seed=0,
                        threshold_scale=1.0 / 64, required=None):
    """Probability that every pair keeps at least a quarter of its relays.

    Returns a dict with the per-pair estimate (mean over pairs), its standard
    error, the worst pair and the all-pairs success frequency.
    """
    need = decomp.diversity if required is None else required
    if decomp.mode != "slow" or decomp.diversity < need:
        raise InsufficientDiversity(
            f"decomposition has diversity {decomp.diversity}, needs {need}")
    ind = relay_event_indicators(decomp, placement, params, const, dense, trials, seed,
                                 threshold_scale)
    q = quarter_success(ind)
    p, se = estimate_probability(q)
    return {"success_prob": p, "stderr": se, "worst_pair": float(q.mean(axis=0).min()),
            "all_pairs": float(q.all(axis=1).mean()),
            "relay_success": float(ind.mean()), "diversity": decomp.diversity}
