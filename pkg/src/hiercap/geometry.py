"""Node placements, squarelet grids and regularity on the square [0, sqrt(n)]^2.

Every placement lives on a square of area n (unit node density). Cells of a
grid are numbered ``k = row * m + col`` with ``row`` taken from the y
coordinate, and a node lying exactly on a boundary between two cells goes to
the cell with the smaller index.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.spatial import cKDTree

from .errors import InfeasibleDensity, InvalidParameter, PlacementParseError

KINDS = ("uniform-random", "lattice", "two-cluster", "gap-cluster", "from-file")

# slack used when comparing coordinates against cell and region boundaries
_EPS = 1e-9


@dataclass(frozen=True)
class NodePlacement:
    """Immutable set of n points in [0, sqrt(n)]^2 with minimum separation.

    Attributes
    ----------
    nodes : ndarray, shape (n, 2)
        Coordinates (read-only).
    r_min : float
        Guaranteed minimum pairwise distance.
    kind : str
        Generator that produced the placement.
    meta : dict
        Generator specific data (cluster bounds, requested resolution, ...).
    """

    nodes: np.ndarray
    r_min: float
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.nodes, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidParameter("nodes must have shape (n, 2)")
        if not 0.0 < self.r_min < 1.0:
            raise InvalidParameter(f"r_min must lie in (0, 1), got {self.r_min}")
        pts.setflags(write=False)
        object.__setattr__(self, "nodes", pts)
        side = math.sqrt(len(pts))
        if len(pts) and (pts.min() < -_EPS or pts.max() > side + _EPS):
            raise InvalidParameter("node outside the region [0, sqrt(n)]^2")
        if len(pts) > 1 and min_pairwise_distance(pts) < self.r_min - 1e-12:
            raise InvalidParameter("minimum separation violated")

    @property
    def n(self):
        return len(self.nodes)

    @property
    def side(self):
        return math.sqrt(self.n)


def min_pairwise_distance(pts):
    """Smallest distance between two distinct rows of ``pts``."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return math.inf
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].min())


def packing_bound(side, r_min):
    """Largest node count a square of sidelength ``side`` can hold."""
    return 4.0 * (side + r_min) ** 2 / (math.pi * r_min ** 2)


# ---------------------------------------------------------------- generators

def generate_placement(kind, n, r_min=0.5, seed=None, d_star=None, path=None,
                       jitter=0.0):
    """Build a placement of ``n`` nodes.

    Parameters
    ----------
    kind : {'uniform-random', 'lattice', 'two-cluster', 'gap-cluster', 'from-file'}
    n : int
        Node count (ignored for 'from-file').
    r_min : float
        Minimum separation, in (0, 1).
    seed : int, optional
        Seed for the random generators.
    d_star : float, optional
        Resolution for 'gap-cluster'; the gap between the clusters is d_star/2.
    path : str, optional
        Input file for 'from-file'.
    jitter : float
        Amplitude of a uniform perturbation applied to the cluster lattices.
        The perturbed placement is re-checked against r_min.
    """
    if kind == "from-file":
        if path is None:
            raise InvalidParameter("from-file needs a path")
        return load_placement(path)
    if kind not in KINDS:
        raise InvalidParameter(f"unknown placement kind {kind!r}")
    n = int(n)
    if n < 4:
        raise InvalidParameter("n must be at least 4")
    if not 0.0 < r_min < 1.0:
        raise InvalidParameter(f"r_min must lie in (0, 1), got {r_min}")
    rng = np.random.default_rng(seed)
    side = math.sqrt(n)

    if kind == "uniform-random":
        pts = _rejection_sample(n, side, r_min, rng)
        return NodePlacement(pts, r_min, kind, {"seed": seed})
    if kind == "lattice":
        k = math.isqrt(n)
        if k * k != n:
            raise InvalidParameter("lattice placement needs a perfect-square n")
        g = np.arange(1, k + 1, dtype=float)
        xx, yy = np.meshgrid(g, g)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return NodePlacement(pts, r_min, kind, {})

    if kind == "two-cluster":
        d_star = side / 2.0
    elif d_star is None:
        raise InvalidParameter("gap-cluster needs d_star")
    d_star = float(d_star)
    if not 0.0 < d_star <= side / 2.0 + _EPS:
        raise InvalidParameter("d_star must lie in (0, sqrt(n)/2]")
    left_w = (side - d_star) / 2.0
    right_x0 = side / 2.0
    n_left = n // 2
    n_right = n - n_left
    left = _fill_rectangle(n_left, 0.0, left_w, side, r_min, from_right=True)
    right = _fill_rectangle(n_right, right_x0, side - right_x0, side, r_min,
                            from_right=False)
    pts = np.vstack([left, right])
    if jitter > 0:
        pts = pts + rng.uniform(-jitter, jitter, size=pts.shape)
        pts[:n_left, 0] = np.clip(pts[:n_left, 0], 0.0, left_w)
        pts[n_left:, 0] = np.clip(pts[n_left:, 0], right_x0, side)
        pts[:, 1] = np.clip(pts[:, 1], 0.0, side)
        if min_pairwise_distance(pts) < r_min:
            raise InfeasibleDensity("jitter breaks the minimum separation")
    meta = {"d_star": d_star, "left": (0.0, left_w), "right": (right_x0, side),
            "gap": (left_w, right_x0)}
    return NodePlacement(pts, r_min, kind, meta)


def _rejection_sample(n, side, r_min, rng):
    """Sequential rejection sampling, processed in vectorised batches.

    Candidates are accepted in draw order exactly as a one-at-a-time sampler
    would, so the result only depends on the rng stream.
    """
    if n > packing_bound(side, r_min):
        raise InfeasibleDensity("packing bound exceeded")
    cap = 10_000 * n
    accepted = np.empty((0, 2))
    drawn = 0
    while len(accepted) < n:
        if drawn >= cap:
            raise InfeasibleDensity(f"rejection sampling gave up after {cap} draws")
        want = n - len(accepted)
        batch = min(max(2 * want, 64), cap - drawn)
        cand = rng.uniform(0.0, side, size=(batch, 2))
        drawn += batch
        if len(accepted):
            d, _ = cKDTree(accepted).query(cand, k=1)
            cand = cand[d >= r_min]
        if len(cand) == 0:
            continue
        # greedy pass inside the batch, in draw order
        pairs = cKDTree(cand).query_pairs(r_min, output_type="ndarray")
        nbrs = [[] for _ in range(len(cand))]
        for i, j in pairs:
            # query_pairs uses <=, separation needs strict <
            if np.hypot(*(cand[i] - cand[j])) < r_min:
                nbrs[min(i, j)].append(max(i, j))
        keep = np.ones(len(cand), dtype=bool)
        for i in range(len(cand)):
            if keep[i]:
                for j in nbrs[i]:
                    keep[j] = False
        cand = cand[keep][:want]
        accepted = np.vstack([accepted, cand])
    return accepted


def _fill_rectangle(count, x0, width, height, r_min, from_right):
    """Cell-centred lattice of ``count`` points in a width x height rectangle.

    Rows have unit spacing when the height is an integer that divides the
    count evenly; otherwise the grid shape follows the aspect ratio. Columns
    are filled starting from the side facing the gap.
    """
    if count == 0:
        return np.empty((0, 2))
    if width <= 0:
        raise InfeasibleDensity("cluster rectangle has no width")
    rows = int(round(height))
    if abs(rows - height) < _EPS and rows > 0 and count % rows == 0:
        cols = count // rows
    else:
        cols = max(1, math.ceil(math.sqrt(count * width / height)))
        rows = math.ceil(count / cols)
    dx, dy = width / cols, height / rows
    if min(dx, dy) < r_min - 1e-12:
        raise InfeasibleDensity(
            f"cannot fit {count} nodes at separation {r_min} in {width:g}x{height:g}")
    order = range(cols - 1, -1, -1) if from_right else range(cols)
    pts = []
    for c in order:
        for r in range(rows):
            if len(pts) == count:
                break
            pts.append((x0 + (c + 0.5) * dx, (r + 0.5) * dy))
    return np.array(pts)


def load_placement(path):
    """Read the text format: a header ``n r_min`` then n lines ``x y``."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.split() for ln in fh if ln.strip()]
        n, r_min = int(lines[0][0]), float(lines[0][1])
        pts = np.array([[float(a), float(b)] for a, b in lines[1:]])
    except (OSError, IndexError, ValueError) as exc:
        raise PlacementParseError(f"cannot parse placement file {path}: {exc}") from exc
    if len(pts) != n:
        raise PlacementParseError(f"header says {n} nodes, file has {len(pts)}")
    try:
        return NodePlacement(pts, r_min, "from-file", {"path": str(path)})
    except InvalidParameter as exc:
        raise PlacementParseError(str(exc)) from exc


def save_placement(placement, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{placement.n} {float(placement.r_min)!r}\n")
        for x, y in placement.nodes:
            fh.write(f"{float(x)!r} {float(y)!r}\n")


# ------------------------------------------------------------------ grids

@dataclass(frozen=True)
class Cell:
    """Closed axis-aligned square [x0, x0+side] x [y0, y0+side]."""

    x0: float
    y0: float
    side: float

    @property
    def bounds(self):
        return self.x0, self.y0, self.x0 + self.side, self.y0 + self.side


def point_to_cell_distance(p, cell):
    """Euclidean distance from ``p`` to the closest point of a closed square.

    ``cell`` is a :class:`Cell` or a tuple ``(x0, y0, x1, y1)``. Accepts an
    array of points with shape (..., 2) and returns an array in that case.
    """
    x0, y0, x1, y1 = cell.bounds if isinstance(cell, Cell) else cell
    p = np.asarray(p, dtype=float)
    dx = np.maximum(np.maximum(x0 - p[..., 0], p[..., 0] - x1), 0.0)
    dy = np.maximum(np.maximum(y0 - p[..., 1], p[..., 1] - y1), 0.0)
    d = np.hypot(dx, dy)
    return float(d) if d.ndim == 0 else d


def cell_index_1d(coord, origin, width, m):
    """Cell index along one axis; boundary points go to the lower cell."""
    t = (np.asarray(coord, dtype=float) - origin) / width
    idx = np.ceil(t - _EPS).astype(int) - 1
    return np.clip(idx, 0, m - 1)


@dataclass(frozen=True)
class SquareletGrid:
    """m x m partition of the square with corner ``origin`` and sidelength ``side``.

    Attributes
    ----------
    members : tuple of ndarray
        Global node indices per cell.
    cell_of : ndarray
        Cell index of each node in ``node_ids`` (same order).
    """

    origin: tuple
    side: float
    cells_per_side: int
    node_ids: np.ndarray
    cell_of: np.ndarray
    members: tuple

    @property
    def cell_side(self):
        return self.side / self.cells_per_side

    @property
    def n_cells(self):
        return self.cells_per_side ** 2

    @property
    def counts(self):
        return np.array([len(m) for m in self.members])

    def cell(self, k):
        m = self.cells_per_side
        row, col = divmod(int(k), m)
        s = self.cell_side
        return Cell(self.origin[0] + col * s, self.origin[1] + row * s, s)

    def cells(self):
        return [self.cell(k) for k in range(self.n_cells)]


def build_grid(placement, cells_per_side, origin=(0.0, 0.0), side=None,
               node_ids=None):
    """Partition a square region into cells and bucket the nodes it contains.

    With ``node_ids`` given only those nodes are bucketed (they must lie in
    the region); otherwise every node inside the closed region is used.
    """
    m = int(cells_per_side)
    if m < 1:
        raise InvalidParameter("cells_per_side must be >= 1")
    side = placement.side if side is None else float(side)
    ox, oy = float(origin[0]), float(origin[1])
    pts = placement.nodes
    if node_ids is None:
        inside = ((pts[:, 0] >= ox - _EPS) & (pts[:, 0] <= ox + side + _EPS)
                  & (pts[:, 1] >= oy - _EPS) & (pts[:, 1] <= oy + side + _EPS))
        node_ids = np.flatnonzero(inside)
    node_ids = np.asarray(node_ids, dtype=int)
    w = side / m
    col = cell_index_1d(pts[node_ids, 0], ox, w, m)
    row = cell_index_1d(pts[node_ids, 1], oy, w, m)
    cell_of = row * m + col
    order = np.argsort(cell_of, kind="stable")
    bounds = np.searchsorted(cell_of[order], np.arange(m * m + 1))
    members = tuple(node_ids[order[bounds[k]:bounds[k + 1]]] for k in range(m * m))
    return SquareletGrid((ox, oy), side, m, node_ids, cell_of, members)


# ------------------------------------------------------------- regularity

@dataclass(frozen=True)
class RegularityProfile:
    """Outcome of the dyadic regularity scan.

    ``min_counts`` holds the smallest tile count at each checked resolution
    and ``thresholds`` the required count ceil(mu h^2).
    """

    mu: float
    resolutions_checked: tuple
    d_star: float
    min_counts: tuple
    thresholds: tuple


def dyadic_resolutions(n):
    """Candidate resolutions sqrt(n)/2^k, coarse to fine, down to about 1."""
    side = math.sqrt(n)
    kmax = int(math.floor(math.log2(side) + _EPS)) if side >= 1 else 0
    return [side / 2 ** k for k in range(kmax + 1)]


def tile_counts(placement, h):
    """Node counts of the tiles of sidelength h (h must tile the region)."""
    m = int(round(placement.side / h))
    grid = build_grid(placement, m)
    return grid.counts


def is_regular(placement, mu, h):
    need = math.ceil(mu * h * h - _EPS)
    return int(tile_counts(placement, h).min()) >= need


def regularity_resolution(placement, mu, candidates=None):
    """Finest dyadic resolution at which every tile holds >= ceil(mu h^2) nodes.

    Regular resolutions are closed under coarsening, so the scan runs from
    coarse to fine and stops at the first failure.
    """
    if not 0.0 < mu <= 1.0:
        raise InvalidParameter("mu must lie in (0, 1]")
    cands = sorted(dyadic_resolutions(placement.n) if candidates is None
                   else [float(c) for c in candidates], reverse=True)
    checked, mins, needs = [], [], []
    d_star = placement.side
    for h in cands:
        counts = tile_counts(placement, h)
        need = math.ceil(mu * h * h - _EPS)
        checked.append(h)
        mins.append(int(counts.min()))
        needs.append(need)
        if counts.min() < need:
            break
        d_star = h
    return RegularityProfile(mu, tuple(checked), d_star, tuple(mins), tuple(needs))
