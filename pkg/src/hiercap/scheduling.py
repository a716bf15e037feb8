"""Relay schedules: decompose a permutation traffic matrix over dense squarelets.

A schedule is stored as a list of ``(pair, cell)`` assignments: pair ``p``
(source ``traffic.sources[p]``, destination ``traffic.destinations[p]``)
relays through squarelet ``cell``. The binary source x squarelet matrix S and
the squarelet x destination matrix S~ are derived from it.

When a squarelet carries several pairs in one schedule, the plain product
S S~ also contains the cross terms (source of one pair, destination of
another). The *slot-refined* matrices split every squarelet column into one
column per carried pair, and their product is exactly the traffic served.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import sparse

from .errors import InvalidParameter, NoEligibleRelay, ScheduleViolation
from .geometry import point_to_cell_distance


@dataclass(frozen=True)
class TrafficMatrix:
    """Permutation traffic over ``nodes``: nodes[i] sends to nodes[pairing[i]]."""

    nodes: np.ndarray
    pairing: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=int)
        pairing = np.asarray(self.pairing, dtype=int)
        if len(nodes) != len(pairing):
            raise InvalidParameter("nodes and pairing differ in length")
        if not np.array_equal(np.sort(pairing), np.arange(len(pairing))):
            raise InvalidParameter("pairing is not a permutation")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "pairing", pairing)

    @property
    def n_pairs(self):
        return len(self.nodes)

    @property
    def sources(self):
        return self.nodes

    @property
    def destinations(self):
        return self.nodes[self.pairing]

    def matrix(self):
        """Dense 0/1 matrix lambda with lambda[i, pairing[i]] = 1 (local indices)."""
        lam = np.zeros((self.n_pairs, self.n_pairs), dtype=int)
        lam[np.arange(self.n_pairs), self.pairing] = 1
        return lam


def random_traffic(nodes, seed=None):
    """Uniformly random permutation traffic over the given node ids."""
    nodes = np.asarray(nodes, dtype=int)
    rng = np.random.default_rng(seed)
    return TrafficMatrix(nodes, rng.permutation(len(nodes)))


@dataclass(frozen=True)
class Schedule:
    """One schedule: ``pairs[j]`` relays through squarelet ``cells[j]``."""

    pairs: np.ndarray
    cells: np.ndarray

    def S(self, n_pairs, n_cells):
        """Source x squarelet 0/1 matrix (rows indexed by local source)."""
        m = np.zeros((n_pairs, n_cells), dtype=int)
        m[self.pairs, self.cells] = 1
        return m

    def S_tilde(self, traffic, n_cells):
        """Squarelet x destination 0/1 matrix (columns by local destination)."""
        m = np.zeros((n_cells, traffic.n_pairs), dtype=int)
        m[self.cells, traffic.pairing[self.pairs]] = 1
        return m

    def loads(self, n_cells):
        return np.bincount(self.cells, minlength=n_cells)


@dataclass(frozen=True)
class ScheduleDecomposition:
    """Schedules covering a traffic matrix.

    ``scale`` multiplies the sum of schedule products: 1 in fast mode, 1/D in
    slow mode where every pair uses D distinct relays. ``rounds`` counts the
    greedy rounds; ``flags`` records threshold conditions that did not hold.
    """

    schedules: tuple
    mode: str
    scale: float
    traffic: TrafficMatrix = field(repr=False)
    n_cells: int
    cap: int
    diversity: int
    rounds: int
    level: int
    count_bound: float
    flags: dict = field(default_factory=dict)

    @property
    def n_schedules(self):
        return len(self.schedules)

    def relays_of(self, pair):
        """Squarelets used by ``pair`` across all schedules, in schedule order."""
        out = []
        for s in self.schedules:
            hit = np.flatnonzero(s.pairs == pair)
            out.extend(int(s.cells[h]) for h in hit)
        return out


# ----------------------------------------------------------- eligibility

def relay_threshold(params, level):
    """Minimum endpoint-to-relay distance sqrt(2 a_{l+1})."""
    return math.sqrt(2.0 * params.a_l[level + 1])


def eligibility_matrix(traffic, dense, placement, params, level=None):
    """Boolean (pairs x cells): dense and at distance >= sqrt(2 a_{l+1}) from both ends."""
    level = dense.level if level is None else level
    thr = relay_threshold(params, level)
    grid = dense.grid
    src = placement.nodes[traffic.sources]
    dst = placement.nodes[traffic.destinations]
    elig = np.zeros((traffic.n_pairs, grid.n_cells), dtype=bool)
    for k in np.flatnonzero(dense.dense):
        c = grid.cell(k)
        ok = (point_to_cell_distance(src, c) >= thr - 1e-9) & \
             (point_to_cell_distance(dst, c) >= thr - 1e-9)
        elig[:, k] = ok
    return elig


def eligible_relays(pair, dense, placement, params, level=None):
    """Dense squarelets far enough from both endpoints of ``pair``.

    ``pair`` is a (source node id, destination node id) tuple.
    """
    level = dense.level if level is None else level
    thr = relay_threshold(params, level)
    s, d = (placement.nodes[int(i)] for i in pair)
    out = set()
    for k in np.flatnonzero(dense.dense):
        c = dense.grid.cell(k)
        if point_to_cell_distance(s, c) >= thr - 1e-9 and \
                point_to_cell_distance(d, c) >= thr - 1e-9:
            out.add(int(k))
    return out


def nearby_cell_count(point, grid, radius):
    """Number of grid cells at distance < radius from ``point``."""
    return sum(point_to_cell_distance(point, c) < radius for c in grid.cells())


# --------------------------------------------------------- decompositions

def _pick(candidates, loads, count):
    """``count`` least-loaded candidates, ties to the lower index."""
    order = np.lexsort((candidates, loads[candidates]))
    return candidates[order[:count]]


def decompose_fast(traffic, dense, placement, params, const, level=None):
    """Greedy single-relay decomposition.

    Pairs are visited in source order; each takes the least-loaded eligible
    dense squarelet holding fewer than ``cap`` pairs. A round (one schedule)
    closes as soon as some pair finds no such squarelet; that pair and the
    ones after it start the next round.
    """
    level = dense.level if level is None else level
    elig = eligibility_matrix(traffic, dense, placement, params, level)
    counts = elig.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise NoEligibleRelay(f"pair {bad} has no eligible dense squarelet")
    cap = params.cap(level)
    n_cells = dense.grid.n_cells
    order = np.argsort(traffic.sources, kind="stable")
    pending = list(order)
    schedules = []
    while pending:
        loads = np.zeros(n_cells, dtype=int)
        pairs, cells = [], []
        for j, p in enumerate(pending):
            cand = np.flatnonzero(elig[p] & (loads < cap))
            if len(cand) == 0:
                break
            k = int(_pick(cand, loads, 1)[0])
            loads[k] += 1
            pairs.append(p)
            cells.append(k)
        else:
            j = len(pending)
        pending = pending[j:]
        schedules.append(Schedule(np.array(pairs, dtype=int), np.array(cells, dtype=int)))
    bound = const.K3 * 2.0 ** level
    flags = _threshold_flags(counts, params, const, level)
    flags["count_bound"] = len(schedules) <= bound
    return ScheduleDecomposition(tuple(schedules), "fast", 1.0, traffic, n_cells, cap,
                                 1, len(schedules), level, bound, flags)


def slow_diversity(params, const, level):
    """D = max(1, floor(K2 2^(-l-1) gamma)) relays per pair."""
    return max(1, int(math.floor(const.K2 * 2.0 ** (-level - 1) * params.gamma + 1e-9)))


def decompose_slow(traffic, dense, placement, params, const, level=None,
                   diversity=None):
    """Multi-relay decomposition with D distinct relays per pair.

    Within a round each pair (source order) takes its D least-loaded eligible
    squarelets below the cap. The round closes when a pair cannot find D of
    them, or right after some squarelet reaches the cap. A round yields D
    schedules, the i-th holding every pair's i-th relay.
    """
    level = dense.level if level is None else level
    D = slow_diversity(params, const, level) if diversity is None else int(diversity)
    if D < 1:
        raise InvalidParameter("diversity must be >= 1")
    elig = eligibility_matrix(traffic, dense, placement, params, level)
    counts = elig.sum(axis=1)
    if np.any(counts < D):
        bad = int(np.flatnonzero(counts < D)[0])
        raise NoEligibleRelay(
            f"pair {bad} has {int(counts[bad])} eligible squarelets, needs {D}")
    cap = params.cap(level)
    n_cells = dense.grid.n_cells
    pending = list(np.argsort(traffic.sources, kind="stable"))
    schedules, rounds = [], 0
    while pending:
        loads = np.zeros(n_cells, dtype=int)
        chosen = []
        j = 0
        while j < len(pending):
            p = pending[j]
            cand = np.flatnonzero(elig[p] & (loads < cap))
            if len(cand) < D:
                break
            ks = _pick(cand, loads, D)
            loads[ks] += 1
            chosen.append((p, ks))
            j += 1
            if loads.max() >= cap:
                break
        if not chosen:
            # cannot happen: an empty round has all loads zero and counts >= D
            raise ScheduleViolation("greedy round made no progress")
        pending = pending[j:]
        rounds += 1
        for i in range(D):
            schedules.append(Schedule(np.array([p for p, _ in chosen], dtype=int),
                                      np.array([int(ks[i]) for _, ks in chosen], dtype=int)))
    bound = const.K2 * 2.0 ** -level * params.gamma ** 2
    flags = _threshold_flags(counts, params, const, level)
    flags["count_bound"] = len(schedules) <= bound
    return ScheduleDecomposition(tuple(schedules), "slow", 1.0 / D, traffic, n_cells,
                                 cap, D, rounds, level, bound, flags)


def _threshold_flags(counts, params, const, level):
    need = const.K2 * 2.0 ** (-level - 1) * params.gamma
    return {"eligible_relays": bool(counts.min() >= need),
            "fifty_exclusion": bool(need >= 50)}


# ----------------------------------------------------------------- audits

def slot_matrices(schedule, traffic):
    """Slot-refined sparse S (pairs x slots) and S~ (slots x destinations)."""
    nslot = len(schedule.pairs)
    slots = np.arange(nslot)
    ones = np.ones(nslot, dtype=int)
    S = sparse.csr_matrix((ones, (schedule.pairs, slots)), shape=(traffic.n_pairs, nslot))
    St = sparse.csr_matrix((ones, (slots, traffic.pairing[schedule.pairs])),
                           shape=(nslot, traffic.n_pairs))
    return S, St


def reconstruct(decomp):
    """scale * sum_i S_i S~_i using the slot-refined matrices (dense array)."""
    n = decomp.traffic.n_pairs
    total = sparse.csr_matrix((n, n), dtype=int)
    for s in decomp.schedules:
        S, St = slot_matrices(s, decomp.traffic)
        total = total + S @ St
    return decomp.scale * total.toarray()


def audit(decomp, placement, params, dense):
    """Recheck every contract of a decomposition; returns a dict of booleans.

    The distance check recomputes point-to-squarelet distances from the
    coordinates instead of trusting the eligibility table.
    """
    tr = decomp.traffic
    lam = tr.matrix()
    rec = reconstruct(decomp)
    out = {"reconstruction": bool(np.allclose(rec, lam, rtol=0, atol=1e-12))}
    caps, rows, dist = True, True, True
    thr = relay_threshold(params, decomp.level)
    for s in decomp.schedules:
        S = s.S(tr.n_pairs, decomp.n_cells)
        St = s.S_tilde(tr, decomp.n_cells)
        caps &= bool(S.sum(axis=0).max(initial=0) <= decomp.cap)
        caps &= bool(St.sum(axis=1).max(initial=0) <= decomp.cap)
        rows &= bool(S.sum(axis=1).max(initial=0) <= 1)
        rows &= bool(St.sum(axis=0).max(initial=0) <= 1)
        for u, k in zip(*np.nonzero(S)):
            dist &= point_to_cell_distance(placement.nodes[tr.sources[u]],
                                           dense.grid.cell(k)) >= thr - 1e-9
        for k, w in zip(*np.nonzero(St)):
            dist &= point_to_cell_distance(placement.nodes[tr.nodes[w]],
                                           dense.grid.cell(k)) >= thr - 1e-9
        dist &= bool(np.all(dense.dense[s.cells]))
    out["caps"] = caps
    out["row_sums"] = rows
    out["distances"] = bool(dist)
    out["count_bound"] = decomp.n_schedules <= decomp.count_bound + 1e-9
    if decomp.mode == "slow":
        out["orthogonal"] = orthogonality_defect(decomp) == 0
        per_pair = np.zeros(tr.n_pairs, dtype=int)
        for s in decomp.schedules:
            per_pair[s.pairs] += 1
        out["diversity"] = bool(np.all(per_pair == decomp.diversity))
    return out


def orthogonality_defect(decomp):
    """sum over i != i' of sum_{u,k} s_uk^(i) s_uk^(i') plus the S~ analogue."""
    tr = decomp.traffic
    mats = [s.S(tr.n_pairs, decomp.n_cells).ravel() for s in decomp.schedules]
    mats_t = [s.S_tilde(tr, decomp.n_cells).ravel() for s in decomp.schedules]
    total = 0
    for A in (np.array(mats), np.array(mats_t)):
        if len(A) == 0:
            continue
        gram = A @ A.T
        total += int(gram.sum() - np.trace(gram))
    return total


def export_triplets(decomp, path):
    """Write (schedule, row, column) triplets of every S matrix as CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("schedule,source,relay,destination\n")
        for i, s in enumerate(decomp.schedules):
            for p, k in zip(s.pairs, s.cells):
                fh.write(f"{i},{p},{k},{decomp.traffic.pairing[p]}\n")
