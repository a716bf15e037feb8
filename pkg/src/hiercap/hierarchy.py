"""Hierarchy parameters, scheme constants and dense-squarelet classification."""
from dataclasses import dataclass, field, replace
import math
import warnings

import numpy as np

from .errors import InvalidParameter, LevelOutOfRange
from .geometry import build_grid


class DivergenceWarning(RuntimeWarning):
    """Raised as a warning when an interference series does not converge."""


# ----------------------------------------------------------- interference

def _zeta_tail(s, m):
    """Euler-Maclaurin estimate of sum_{i>m} i^-s."""
    return (m ** (1 - s) / (s - 1) - 0.5 * m ** (-s) + s * m ** (-s - 1) / 12.0
            - s * (s + 1) * (s + 2) * m ** (-s - 3) / 720.0)


def interference_series(alpha, cutoff):
    """Partial sum 1 + sum_{i=1}^{cutoff} 8 i 2^alpha i^-alpha and its tail bound.

    The tail bound is 8 2^alpha int_cutoff^inf x^(1-alpha) dx, infinite for
    alpha <= 2.
    """
    cutoff = int(cutoff)
    if cutoff < 1:
        raise InvalidParameter("cutoff must be >= 1")
    i = np.arange(1, cutoff + 1, dtype=float)
    # sum from the small terms upwards for accuracy
    partial = 1.0 + 8.0 * 2.0 ** alpha * np.sum((i ** (1.0 - alpha))[::-1])
    if alpha <= 2:
        warnings.warn(f"interference series diverges for alpha={alpha}",
                      DivergenceWarning, stacklevel=2)
        return float(partial), math.inf
    tail = 8.0 * 2.0 ** alpha * cutoff ** (2.0 - alpha) / (alpha - 2.0)
    return float(partial), float(tail)


def noise_interference_power(alpha, rtol=1e-10):
    """N0 = 1 + 8 2^alpha sum_{i>=1} i^(1-alpha), summed to relative tolerance rtol."""
    if alpha <= 2:
        raise InvalidParameter("N0 is finite only for alpha > 2")
    s = alpha - 1.0
    m, prev = 64, None
    while True:
        i = np.arange(1, m + 1, dtype=float)
        total = np.sum((i ** -s)[::-1]) + _zeta_tail(s, m)
        val = 1.0 + 8.0 * 2.0 ** alpha * total
        if prev is not None and abs(val - prev) <= rtol * abs(val):
            return float(val)
        prev, m = val, 2 * m
        if m > 1 << 24:
            return float(val)


# -------------------------------------------------------------- constants

@dataclass(frozen=True)
class SchemeConstants:
    """Constants of the relaying scheme (base-2 logarithms)."""

    r_min: float
    alpha: float
    delta2: float
    N0: float
    K1: float
    K2: float
    K3: float
    K4: float
    K5: float
    K6: float
    K7: float

    @property
    def bc_power_factor(self):
        """K = 2^-alpha (1 - Delta^2), message power factor of the beamformer."""
        return 2.0 ** -self.alpha * (1.0 - self.delta2)


def scheme_constants(alpha, r_min=0.5, delta2=0.5, extra_noise=0.0):
    """Evaluate N0 and K1..K7.

    ``extra_noise`` is added to N0 (used when a relaying session sees a
    bounded amount of additional interference).
    """
    if not alpha > 2:
        raise InvalidParameter(f"alpha must exceed 2, got {alpha}")
    if not 0 < delta2 < 1:
        raise InvalidParameter(f"Delta^2 must lie in (0, 1), got {delta2}")
    if not 0 < r_min < 1:
        raise InvalidParameter(f"r_min must lie in (0, 1), got {r_min}")
    N0 = noise_interference_power(alpha) + extra_noise
    K1 = 4.0 * (1.0 + r_min) ** 2 / (math.pi * r_min ** 2)
    K2 = 1.0 / (2.0 * K1)
    K3 = 4.0 / K2
    K4 = 0.5 * math.log2(1.0 + 2.0 ** (-1.5 * alpha) / (2.0 ** (alpha / 2) + N0 + delta2))
    K5 = math.log2(1.0 + (2.0 ** (-alpha / 2) + N0) / delta2) / K4
    K6 = K4
    K7 = (math.log2(1.0 / delta2) + 1.0 + alpha / 2.0) / K6
    return SchemeConstants(r_min, alpha, delta2, N0, K1, K2, K3, K4, K5, K6, K7)


# -------------------------------------------------------------- hierarchy

def depth(n, delta):
    """L = max(1, round(log2(n)^(1/2 - delta))), rounding halves upward."""
    return max(1, int(math.floor(math.log2(n) ** (0.5 - delta) + 0.5)))


def branching(n, L):
    """gamma = max(2, floor(n^(1/(L+1)))), computed with an exact integer root."""
    k = L + 1
    g = int(round(n ** (1.0 / k)))
    while g ** k > n:
        g -= 1
    while (g + 1) ** k <= n:
        g += 1
    return max(2, g)


@dataclass(frozen=True)
class HierarchyParams:
    """Structural parameters of the hierarchy.

    ``n_l``, ``a_l`` and ``P_l`` are indexed by level 0..L and kept as reals.
    The geometric grid uses ``cells_per_side`` = floor(sqrt(gamma)) cells per
    side; see :func:`geometric_params` for a parameter set whose gamma is an
    exact square.
    """

    n: int
    alpha: float
    delta: float
    L: int
    gamma: int
    n_l: np.ndarray = field(repr=False)
    a_l: np.ndarray = field(repr=False)
    P_l: np.ndarray = field(repr=False)

    @property
    def cells_per_side(self):
        return max(1, math.isqrt(self.gamma))

    def cap(self, level):
        """Per-relay pair cap at ``level``: floor(n_{level+1}), at least 1."""
        return max(1, int(math.floor(self.n_l[level + 1] + 1e-9)))


def build_params(n, alpha, delta=0.25, r_min=0.5, delta2=0.5, gamma=None,
                 levels=None, extra_noise=0.0):
    """Hierarchy parameters and scheme constants for n nodes.

    Parameters
    ----------
    gamma, levels : int, optional
        Override the branching factor and the depth. ``levels=0`` gives the
        degenerate single-level hierarchy that uses TDMA directly.

    Returns
    -------
    (HierarchyParams, SchemeConstants)
    """
    if not 0 < delta < 0.5:
        raise InvalidParameter(f"delta must lie in (0, 1/2), got {delta}")
    if n < 16:
        raise InvalidParameter("n must be at least 16")
    const = scheme_constants(alpha, r_min, delta2, extra_noise)
    L = depth(n, delta) if levels is None else int(levels)
    if L < 0:
        raise InvalidParameter("levels must be >= 0")
    g = branching(n, max(L, 1)) if gamma is None else int(gamma)
    if g < 2:
        raise InvalidParameter("gamma must be >= 2")
    ell = np.arange(L + 1, dtype=float)
    n_l = n / (2.0 ** ell * float(g) ** ell)
    a_l = n / float(g) ** ell
    P_l = const.K2 * 2.0 ** -ell * g
    params = HierarchyParams(int(n), float(alpha), float(delta), L, g, n_l, a_l, P_l)
    return params, const


def geometric_params(params):
    """Same hierarchy with gamma replaced by cells_per_side^2.

    Squarelets of the geometric grid then have area exactly a_{l+1}.
    """
    g = params.cells_per_side ** 2
    if g == params.gamma:
        return params
    ell = np.arange(params.L + 1, dtype=float)
    n_l = params.n / (2.0 ** ell * float(g) ** ell)
    a_l = params.n / float(g) ** ell
    P_l = params.P_l * g / params.gamma
    return replace(params, gamma=g, n_l=n_l, a_l=a_l, P_l=P_l)


def power_condition(params, const=None):
    """Per level l < L, whether P_l <= n_{l+1}^-1 a_l^(alpha/2)."""
    L = params.L
    if L == 0:
        return np.array([], dtype=bool)
    lhs = params.P_l[:L]
    rhs = params.a_l[:L] ** (params.alpha / 2) / params.n_l[1:]
    return lhs <= rhs


def power_threshold(alpha, delta=0.25, r_min=0.5, delta2=0.5, log2_max=40):
    """Smallest n = 2^k (k >= 4) from which the power condition holds on the scan."""
    ok = []
    for k in range(4, log2_max + 1):
        p, c = build_params(2 ** k, alpha, delta, r_min, delta2)
        ok.append(bool(np.all(power_condition(p, c))))
    for i in range(len(ok)):
        if all(ok[i:]):
            return 2 ** (i + 4)
    return None


def level_table(params):
    """Rows (l, n_l, a_l, P_l, dense_count_bound) for CSV export."""
    K2 = params.P_l[0] / params.gamma
    rows = []
    for ell in range(params.L + 1):
        rows.append((ell, float(params.n_l[ell]), float(params.a_l[ell]),
                     float(params.P_l[ell]), K2 * 2.0 ** -ell * params.gamma))
    return rows


# ----------------------------------------------------- dense squarelets

@dataclass(frozen=True)
class DenseSquareletReport:
    """Dense-squarelet census of one region at one level.

    ``lower_bound`` is K2 2^-l gamma and ``upper_bound`` is K1 a_l / gamma;
    ``counts_ok`` says whether dense_count >= ceil(lower_bound) and
    max_count <= upper_bound both hold.
    """

    level: int
    grid: object = field(repr=False)
    counts: np.ndarray = field(repr=False)
    dense: np.ndarray = field(repr=False)
    dense_count: int
    max_count: int
    lower_bound: float
    upper_bound: float
    region_nodes: int
    counts_ok: bool

    @property
    def below_threshold(self):
        return not self.counts_ok

    @property
    def dense_cells(self):
        return np.flatnonzero(self.dense)


def level_regions(placement, params, level):
    """Level-``level`` regions of area a_level holding at least n_level nodes.

    Returns a list of (origin, side) tuples, row-major. Level 0 is the whole
    placement square.
    """
    m = params.cells_per_side
    per_side = m ** level
    grid = build_grid(placement, per_side)
    out = []
    for k, members in enumerate(grid.members):
        if len(members) >= params.n_l[level] - 1e-9:
            c = grid.cell(k)
            out.append(((c.x0, c.y0), c.side))
    return out


def classify_squarelets(placement, params, const, level, region=None):
    """Flag the squarelets of a level-``level`` region as dense or not.

    Parameters
    ----------
    params : HierarchyParams
        Should come from :func:`geometric_params` so that the grid has gamma
        cells; other values are accepted and the bounds use params.gamma.
    region : tuple ((x0, y0), side), optional
        Defaults to the first region returned by :func:`level_regions`.
    """
    if not 0 <= level < params.L:
        raise LevelOutOfRange(f"level {level} outside [0, {params.L})")
    if region is None:
        regions = level_regions(placement, params, level)
        if not regions:
            region = ((0.0, 0.0), placement.side / params.cells_per_side ** level)
        else:
            region = regions[0]
    origin, side = region
    grid = build_grid(placement, params.cells_per_side, origin=origin, side=side)
    counts = grid.counts
    dense = counts >= params.n_l[level + 1] - 1e-9
    lower = const.K2 * 2.0 ** -level * params.gamma
    upper = const.K1 * params.a_l[level] / params.gamma
    dc, mc = int(dense.sum()), int(counts.max())
    ok = dc >= math.ceil(lower - 1e-12) and mc <= upper + 1e-9
    return DenseSquareletReport(level, grid, counts, dense, dc, mc, lower, upper,
                                int(counts.sum()), bool(ok))
