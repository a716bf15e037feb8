"""Geometric cut-set upper bounds.

For a cut (S1, S2) the total gain P = sum_{u in S1, v in S2} r_uv^-alpha and
the normalized-gain maximum G = max_v sum_u r_uv^-alpha / R_u, with
R_u = sum_{v in S2} r_uv^-alpha, give the capacity bound 4 max(1, G) P (nats
per channel use). All sums are exact, computed from the coordinates.
"""
from dataclasses import dataclass, field
import math
import warnings

import numba
import numpy as np

from .errors import EmptySide, NoBalancedCut, WrongPlacementKind
from .geometry import NodePlacement
from .scheduling import random_traffic

LOG2E = 1.0 / math.log(2.0)

# older system TBB builds trigger a harmless fallback notice on first use
warnings.filterwarnings("ignore", message="The TBB threading layer",
                        category=numba.NumbaWarning)


# -------------------------------------------------------------- kernels

@numba.njit(cache=True, inline="always")
def _gain(r2, alpha, half_int):
    if half_int > 0:
        inv = 1.0 / r2
        w = inv
        for _ in range(half_int - 1):
            w *= inv
        return w
    return r2 ** (-0.5 * alpha)


@numba.njit(parallel=True, cache=True)
def _row_sums(x1, y1, x2, y2, alpha, half_int):
    n1 = x1.shape[0]
    R = np.zeros(n1)
    for i in numba.prange(n1):
        s = 0.0
        for j in range(x2.shape[0]):
            dx = x1[i] - x2[j]
            dy = y1[i] - y2[j]
            s += _gain(dx * dx + dy * dy, alpha, half_int)
        R[i] = s
    return R


@numba.njit(parallel=True, cache=True)
def _normalized_col_sums(x1, y1, x2, y2, R, alpha, half_int):
    n2 = x2.shape[0]
    C = np.zeros(n2)
    for j in numba.prange(n2):
        s = 0.0
        for i in range(x1.shape[0]):
            dx = x1[i] - x2[j]
            dy = y1[i] - y2[j]
            s += _gain(dx * dx + dy * dy, alpha, half_int) / R[i]
        C[j] = s
    return C


def cut_sums(p1, p2, alpha):
    """Row sums R_u and normalized column sums sum_u r_uv^-alpha / R_u."""
    p1 = np.ascontiguousarray(p1, dtype=float)
    p2 = np.ascontiguousarray(p2, dtype=float)
    h = alpha / 2.0
    half_int = int(h) if float(h).is_integer() and h >= 1 else 0
    R = _row_sums(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], float(alpha), half_int)
    C = _normalized_col_sums(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], R, float(alpha),
                             half_int)
    return R, C


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class Cut:
    """Two-sided partition of a point set.

    ``left`` marks S1. ``helpers`` marks points that carry no traffic (they
    are appended after the real nodes). ``position`` is the x coordinate of a
    vertical cut line; ``kind`` describes the geometry ('vertical', 'gap').
    """

    points: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    helpers: np.ndarray = field(repr=False)
    position: float
    kind: str = "vertical"

    def __post_init__(self):
        left = np.asarray(self.left, dtype=bool)
        object.__setattr__(self, "left", left)
        if self.helpers is None:
            object.__setattr__(self, "helpers", np.zeros(len(left), dtype=bool))
        if not left.any() or left.all():
            raise EmptySide("both sides of a cut must be non-empty")

    @property
    def n_real(self):
        return int((~self.helpers).sum())

    @classmethod
    def vertical(cls, points, x, helpers=None, kind="vertical"):
        pts = np.asarray(points, dtype=float)
        return cls(pts, pts[:, 0] < x, helpers, float(x), kind)


@dataclass(frozen=True)
class CutBound:
    """Cut-set bound of one cut.

    ``bound`` is 4 max(1, G) P in nats; ``bound_bits`` the same in bits.
    ``per_pair`` divides ``bound_bits`` by the number of traffic pairs
    crossing from S1 to S2 (inf when no pair crosses).
    """

    P: float
    G: float
    bound: float
    bound_bits: float
    crossing: int
    per_pair: float
    n1: int
    n2: int
    row_normalized: bool
    checks: dict = field(default_factory=dict)


def crossing_pairs(cut, traffic):
    """Pairs with the source in S1 and the destination in S2 (real nodes only)."""
    left = cut.left
    return int(np.sum(left[traffic.sources] & ~left[traffic.destinations]))


def mimo_cut_bound(placement, cut, alpha, traffic=None):
    """Evaluate the cut-set bound of ``cut`` exactly from the geometry.

    Parameters
    ----------
    placement : NodePlacement or ndarray
        Only used when ``cut.points`` is None.
    traffic : TrafficMatrix, optional
        Needed for the per-pair bound.
    """
    pts = cut.points if cut.points is not None else _points(placement)
    p1, p2 = pts[cut.left], pts[~cut.left]
    if len(p1) == 0 or len(p2) == 0:
        raise EmptySide("both sides of a cut must be non-empty")
    R, C = cut_sums(p1, p2, alpha)
    P = float(R.sum())
    G = float(C.max())
    bound = 4.0 * max(1.0, G) * P
    bits = bound * LOG2E
    crossing = crossing_pairs(cut, traffic) if traffic is not None else 0
    per_pair = bits / crossing if crossing else math.inf
    # sum_v |h~_uv|^2 = R_u / R_u = 1 for every u, so the column sums add to |S1|
    row_ok = bool(abs(C.sum() - len(p1)) <= 1e-9 * len(p1))
    checks = {"G_le_S1": G <= len(p1) * (1 + 1e-12), "row_normalized": row_ok}
    return CutBound(P, G, bound, bits, crossing, per_pair, len(p1), len(p2), row_ok, checks)


def _points(placement):
    return placement.nodes if isinstance(placement, NodePlacement) else np.asarray(placement)


# ---------------------------------------------------------- converse cut

@dataclass(frozen=True)
class ConverseReport:
    """Balanced vertical cut with helper augmentation and its bound."""

    cut: Cut
    bound: CutBound
    n_helpers: int
    tile_side: float
    conditions: dict

    @property
    def per_node(self):
        return self.bound.per_pair


def balanced_cut_position(xs, side):
    """Most balanced half-integer x with at least n/4 nodes on each side."""
    xs = np.sort(np.asarray(xs, dtype=float))
    n = len(xs)
    cand = np.arange(0, int(math.floor(side)) + 1) + 0.5
    left = np.searchsorted(xs, cand)
    ok = (left >= n / 4.0) & (n - left >= n / 4.0)
    if not ok.any():
        raise NoBalancedCut("no half-integer vertical cut leaves n/4 nodes per side")
    score = np.where(ok, np.abs(2 * left - n), np.iinfo(np.int64).max)
    return float(cand[int(np.argmin(score))])


def helper_nodes(points, side, n):
    """Centres of the empty tiles of a grid with tiles of side <= sqrt(2 log2 n)."""
    d = math.sqrt(2.0 * math.log2(n))
    m = max(1, int(math.ceil(side / d - 1e-12)))
    t = side / m
    ix = np.clip(np.ceil(points[:, 0] / t - 1e-9).astype(int) - 1, 0, m - 1)
    iy = np.clip(np.ceil(points[:, 1] / t - 1e-9).astype(int) - 1, 0, m - 1)
    occ = np.zeros((m, m), dtype=bool)
    occ[iy, ix] = True
    ry, rx = np.nonzero(~occ)
    return np.column_stack([(rx + 0.5) * t, (ry + 0.5) * t]), t


def unit_square_max(points, side):
    """Largest number of points in a unit cell of the integer grid."""
    m = max(1, int(math.ceil(side - 1e-12)))
    ix = np.clip(np.floor(points[:, 0]).astype(int), 0, m - 1)
    iy = np.clip(np.floor(points[:, 1]).astype(int), 0, m - 1)
    return int(np.bincount(iy * m + ix, minlength=m * m).max())


def converse_cut(placement, alpha, traffic=None, seed=0):
    """Per-node upper bound from a balanced vertical cut with helper nodes.

    Helper nodes fill every empty tile of side at most sqrt(2 log2 n); they
    enlarge both sides of the cut but carry no traffic. The two geometric
    conditions used by the converse argument are reported in
    ``conditions``: at most log2 n nodes per unit square and every tile
    occupied after augmentation.
    """
    n = placement.n
    side = placement.side
    if traffic is None:
        traffic = random_traffic(np.arange(n), seed)
    x = balanced_cut_position(placement.nodes[:, 0], side)
    helpers, t = helper_nodes(placement.nodes, side, n)
    pts = np.vstack([placement.nodes, helpers])
    hmask = np.zeros(len(pts), dtype=bool)
    hmask[n:] = True
    cut = Cut.vertical(pts, x, hmask)
    cb = mimo_cut_bound(None, cut, alpha, traffic)
    occupied = len(helper_nodes(pts, side, n)[0]) == 0
    conditions = {
        "unit_square_density": unit_square_max(placement.nodes, side) <= math.log2(n),
        "tiles_occupied": occupied,
        "alpha_regime": 2.0 < alpha <= 3.0,
        "balanced": bool(min(cut.left[:n].sum(), n - cut.left[:n].sum()) >= n / 4.0),
    }
    return ConverseReport(cut, cb, len(helpers), t, conditions)


# -------------------------------------------------------- adversarial cut

def adversarial_gap_bound(placement, alpha, traffic=None, seed=0):
    """Cut-set bound across the empty strip of a gap-cluster placement.

    The cut runs through the middle of the gap. For two-cluster placements
    the checks also cover the normalized-gain bound G <= 2^(3 alpha) and the
    per-pair bound 2^(2+5 alpha) n^(1-alpha/2).
    """
    if placement.kind not in ("gap-cluster", "two-cluster"):
        raise WrongPlacementKind(
            f"expected a gap-cluster or two-cluster placement, got {placement.kind!r}")
    n = placement.n
    if traffic is None:
        traffic = random_traffic(np.arange(n), seed)
    g0, g1 = placement.meta["gap"]
    cut = Cut.vertical(placement.nodes, 0.5 * (g0 + g1), kind="gap")
    cb = mimo_cut_bound(placement, cut, alpha, traffic)
    if placement.kind == "two-cluster":
        cb.checks["gain_le_2^3a"] = cb.G <= 2.0 ** (3 * alpha)
        limit = 2.0 ** (2 + 5 * alpha) * n ** (1 - alpha / 2)
        cb.checks["per_pair_le_two_cluster_limit"] = cb.per_pair <= limit
    return cb
