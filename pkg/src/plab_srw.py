"""
polymerlab - Simple Random Walk Oracle

Green functions, exit distributions, confinement tails and range statistics
of the simple random walk killed outside a finite region. Exact answers come
from sparse linear algebra on the killed kernel; larger regions fall back to
vectorised Monte Carlo.
"""

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from pathlib import Path as FilePath
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from plab_core import Point, stream

logger = logging.getLogger(__name__)

MAX_REGION_SITES = 200_000
SOLVER_RTOL = 1e-12


def _neighbours(x: Point) -> List[Point]:
    out = []
    for i in range(len(x)):
        for s in (1, -1):
            y = list(x)
            y[i] += s
            out.append(tuple(y))
    return out


@dataclass(frozen=True)
class Region:
    """Finite lattice set Λ with a human-readable descriptor."""

    points: frozenset
    d: int
    descriptor: str = "points"

    def __post_init__(self):
        if not self.points:
            raise ValueError("Region must contain at least one site")
        if any(len(p) != self.d for p in self.points):
            raise ValueError(f"Region points must all have dimension {self.d}")

    @classmethod
    def from_points(cls, points: Iterable[Sequence[int]], descriptor: str = "points") -> "Region":
        pts = frozenset(tuple(int(c) for c in p) for p in points)
        if not pts:
            raise ValueError("Region must contain at least one site")
        d = len(next(iter(pts)))
        return cls(pts, d, descriptor)

    @classmethod
    def box(cls, radius: int, d: int = 2) -> "Region":
        """ℓ∞ ball [−r, r]^d."""
        pts = product(range(-radius, radius + 1), repeat=d)
        return cls.from_points(pts, f"box(r={radius},d={d})")

    @classmethod
    def l1_ball(cls, radius: int, d: int = 2) -> "Region":
        """{y : ‖y‖₁ < radius}."""
        pts = [p for p in product(range(-radius, radius + 1), repeat=d) if sum(map(abs, p)) < radius]
        return cls.from_points(pts, f"l1(r={radius},d={d})")

    @classmethod
    def euclidean_ball(cls, radius: float, d: int = 2) -> "Region":
        r = int(math.ceil(radius))
        pts = [p for p in product(range(-r, r + 1), repeat=d) if sum(c * c for c in p) <= radius * radius]
        return cls.from_points(pts, f"disc(r={radius},d={d})")

    @classmethod
    def xi_ball(cls, radius: float, metric, d: int = 2, center: Optional[Sequence[int]] = None) -> "Region":
        """Open ξ-ball {y : ξ(y − center) < radius} using the metric midpoints."""
        c = np.zeros(d, dtype=int) if center is None else np.asarray(center, dtype=int)
        r = 1
        while True:
            shell = np.array([p for p in product(range(-r, r + 1), repeat=d) if max(map(abs, p)) == r])
            if np.all(metric.many(shell) >= radius):
                break
            r += 1
        grid = np.array(list(product(range(-r, r + 1), repeat=d)))
        inside = grid[metric.many(grid) < radius] + c
        return cls.from_points(inside, f"xi(r={radius},d={d})")

    def __contains__(self, x) -> bool:
        return tuple(x) in self.points

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def ordered(self) -> List[Point]:
        return sorted(self.points)

    @cached_property
    def index(self) -> Dict[Point, int]:
        return {p: i for i, p in enumerate(self.ordered)}

    @cached_property
    def boundary(self) -> List[Point]:
        """Outer vertex boundary: sites outside Λ adjacent to Λ."""
        outer = {y for x in self.points for y in _neighbours(x) if y not in self.points}
        return sorted(outer)

    def interior(self) -> List[Point]:
        return [x for x in self.ordered if all(y in self.points for y in _neighbours(x))]

    def inradius(self) -> int:
        """max over x ∈ Λ of the lattice distance from x to the complement."""
        dist = {}
        queue = deque()
        for z in self.boundary:
            dist[z] = 0
            queue.append(z)
        while queue:
            z = queue.popleft()
            for y in _neighbours(z):
                if y in self.points and y not in dist:
                    dist[y] = dist[z] + 1
                    queue.append(y)
        return max(dist[x] for x in self.points)

    @cached_property
    def kernel(self) -> sparse.csr_matrix:
        """One-step SRW kernel killed outside Λ."""
        n = len(self.points)
        rows, cols = [], []
        for x, i in self.index.items():
            for y in _neighbours(x):
                j = self.index.get(y)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
        data = np.full(len(rows), 1.0 / (2 * self.d))
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def _check_size(region: Region):
    if len(region) > MAX_REGION_SITES:
        raise ValueError(f"Region with {len(region)} sites exceeds the solver cap {MAX_REGION_SITES}")


def _solve_column(region: Region, y: Point) -> np.ndarray:
    """G_Λ(·, y) from (I − P_Λ) g = e_y; the system is symmetric positive definite."""
    _check_size(region)
    n = len(region)
    system = sparse.identity(n, format="csr") - region.kernel
    rhs = np.zeros(n)
    rhs[region.index[tuple(y)]] = 1.0
    solution, info = splinalg.cg(system, rhs, rtol=SOLVER_RTOL, atol=0.0, maxiter=50 * n + 100)
    if info != 0:
        raise RuntimeError(f"Green function solve on {region.descriptor} did not converge (info={info})")
    return solution


def green_function(region: Region, x: Sequence[int], y: Sequence[int]) -> float:
    """
    G_Λ(x, y): expected visits to y before leaving Λ, starting at x.

    Raises:
        ValueError: If x or y is outside Λ or Λ is too large
    """
    x, y = tuple(x), tuple(y)
    for p in (x, y):
        if p not in region:
            raise ValueError(f"{p} is not in region {region.descriptor}")
    return float(_solve_column(region, y)[region.index[x]])


# ---------------------------------------------------------------------------
# Exit distribution
# ---------------------------------------------------------------------------

@dataclass
class ExitDistribution:
    """Harmonic measure on the outer boundary, with standard errors in MC mode."""

    region: str
    start: Point
    mode: str
    probabilities: Dict[Point, float]
    stderr: Dict[Point, float] = field(default_factory=dict)
    walks: int = 0

    def ratio(self) -> float:
        """min/max probability over boundary sites."""
        values = list(self.probabilities.values())
        return min(values) / max(values)


def exit_distribution(
    region: Region,
    start: Optional[Sequence[int]] = None,
    mode: str = "auto",
    walks: int = 100_000,
    seed: int = 0,
    exact_cap: int = 20_000,
) -> ExitDistribution:
    """
    Distribution of the first site outside Λ.

    Args:
        region: Λ
        start: Starting site (default origin)
        mode: "exact", "monte-carlo" or "auto" (exact up to exact_cap sites)
        walks: Monte Carlo sample size
        seed: Master seed for the Monte Carlo stream

    Returns:
        ExitDistribution
    """
    start = (0,) * region.d if start is None else tuple(start)
    if start not in region:
        raise ValueError(f"Start {start} is not in region {region.descriptor}")
    if mode == "auto":
        mode = "exact" if len(region) <= exact_cap else "monte-carlo"
        if mode == "monte-carlo":
            logger.warning("region %s has %d sites; using Monte Carlo exit sampling", region.descriptor, len(region))
    if mode == "exact":
        green = _solve_column(region, start)
        probs = {}
        for z in region.boundary:
            mass = sum(green[region.index[y]] for y in _neighbours(z) if y in region.points)
            probs[z] = mass / (2 * region.d)
        return ExitDistribution(region.descriptor, start, "exact", probs)
    if mode != "monte-carlo":
        raise ValueError(f"Unknown exit mode '{mode}'")

    rng = stream(seed, "srw.exit", len(region))
    exits = _simulate_exits(region, start, walks, rng)
    keys, counts = np.unique(exits, axis=0, return_counts=True)
    probs = {}
    errs = {}
    for key, count in zip(keys, counts):
        p = count / walks
        probs[tuple(int(c) for c in key)] = p
        errs[tuple(int(c) for c in key)] = math.sqrt(p * (1 - p) / walks)
    for z in region.boundary:
        probs.setdefault(z, 0.0)
        errs.setdefault(z, 1.0 / walks)
    return ExitDistribution(region.descriptor, start, "monte-carlo", probs, errs, walks)


def _bounding_mask(region: Region) -> Tuple[np.ndarray, np.ndarray]:
    pts = np.array(region.ordered)
    lo = pts.min(axis=0) - 1
    shape = tuple(pts.max(axis=0) - lo + 2)
    mask = np.zeros(shape, dtype=bool)
    mask[tuple((pts - lo).T)] = True
    return mask, lo


def _simulate_exits(region: Region, start: Point, walks: int, rng: np.random.Generator) -> np.ndarray:
    mask, lo = _bounding_mask(region)
    d = region.d
    pos = np.tile(np.asarray(start) - lo, (walks, 1))
    active = np.ones(walks, dtype=bool)
    while active.any():
        idx = np.nonzero(active)[0]
        axes = rng.integers(0, d, size=idx.size)
        signs = rng.choice((-1, 1), size=idx.size)
        pos[idx, axes] += signs
        still = mask[tuple(pos[idx].T)]
        active[idx[~still]] = False
    return pos + lo


# ---------------------------------------------------------------------------
# Confinement
# ---------------------------------------------------------------------------

@dataclass
class ConfinementTail:
    """P(τ_Λ > n) with its decay rate scaled by the inradius."""

    region: str
    n: int
    probability: float
    rate: float
    fitted_rate: float
    inradius: int

    @property
    def scaled_rate(self) -> float:
        return self.fitted_rate * self.inradius ** 2


def confinement_tail(region: Region, start: Optional[Sequence[int]] = None, n: int = 0) -> ConfinementTail:
    """
    Exact survival probability by repeated application of the killed kernel.

    The fitted rate is the slope of −log P over the second half of [0, n],
    which removes the prefactor of the leading eigenmode.
    """
    start = (0,) * region.d if start is None else tuple(start)
    if start not in region:
        raise ValueError(f"Start {start} is not in region {region.descriptor}")
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    _check_size(region)
    kernel = region.kernel
    i0 = region.index[start]
    v = np.ones(len(region))
    log_scale = 0.0
    history = [0.0]
    for _ in range(n):
        v = kernel @ v
        top = v.max()
        v /= top
        log_scale += math.log(top)
        history.append(log_scale + math.log(v[i0]) if v[i0] > 0 else -math.inf)
    log_p = history[-1]
    rate = -log_p / n if n > 0 else 0.0
    half = n // 2
    if n >= 2 and math.isfinite(history[half]) and math.isfinite(log_p):
        fitted = -(log_p - history[half]) / (n - half)
    else:
        fitted = rate
    return ConfinementTail(region.descriptor, n, math.exp(log_p), rate, fitted, region.inradius())


# ---------------------------------------------------------------------------
# Range
# ---------------------------------------------------------------------------

@dataclass
class RangeStats:
    n: int
    mean: float
    stderr: float
    clipped_mean: float
    clipped_stderr: float
    mode: str
    reps: int


def range_statistics(
    n: int,
    d: int = 2,
    clip: Optional[Region] = None,
    reps: int = 10_000,
    seed: int = 0,
    mode: str = "auto",
) -> RangeStats:
    """
    E|R_n| and E|R_n ∩ clip| for the free simple random walk.

    Exact enumeration is used for (2d)^n ≤ 2^20 in auto mode.
    """
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if n == 0:
        return RangeStats(0, 1.0, 0.0, 1.0 if clip is None or (0,) * d in clip else 0.0, 0.0, "exact", 1)
    if mode == "auto":
        mode = "exact" if (2 * d) ** n <= 2 ** 20 else "monte-carlo"
    if mode == "exact":
        codes = np.array(list(product(range(2 * d), repeat=n)), dtype=np.int64)
    elif mode == "monte-carlo":
        codes = stream(seed, "srw.range", n).integers(0, 2 * d, size=(reps, n))
    else:
        raise ValueError(f"Unknown range mode '{mode}'")

    moves = np.zeros((2 * d, d), dtype=np.int64)
    for k in range(2 * d):
        moves[k, k // 2] = 1 if k % 2 == 0 else -1
    walks = codes.shape[0]
    positions = np.concatenate(
        [np.zeros((walks, 1, d), dtype=np.int64), np.cumsum(moves[codes], axis=1)], axis=1
    )
    base = 2 * n + 1
    keys = ((positions + n) * base ** np.arange(d)).sum(axis=2)
    keys.sort(axis=1)
    fresh = np.ones_like(keys, dtype=bool)
    fresh[:, 1:] = keys[:, 1:] != keys[:, :-1]
    sizes = fresh.sum(axis=1).astype(float)

    if clip is not None:
        clip_keys = np.array([sum((c + n) * base ** i for i, c in enumerate(p)) for p in clip.ordered
                              if max(map(abs, p)) <= n])
        clipped = (fresh & np.isin(keys, clip_keys)).sum(axis=1).astype(float)
    else:
        clipped = sizes

    def moments(values):
        if mode == "exact" or walks < 2:
            return float(values.mean()), 0.0
        return float(values.mean()), float(values.std(ddof=1) / math.sqrt(walks))

    mean, err = moments(sizes)
    cmean, cerr = moments(clipped)
    return RangeStats(n, mean, err, cmean, cerr, mode, walks)


def clipped_range_until_exit(N: int, d: int = 2, reps: int = 200, seed: int = 0) -> Tuple[float, float]:
    """
    E #({S_k : k ≤ τ_{2N}} ∩ N·C) for C = [−1, 1]^d.

    Walks run until they leave the box of radius 2N; distinct sites inside
    the box of radius N are counted.

    Returns:
        (mean, standard error)
    """
    outer = 2 * N
    side = 2 * outer + 1
    visited = np.zeros((reps, side ** d), dtype=bool)
    strides = side ** np.arange(d)
    pos = np.full((reps, d), outer, dtype=np.int64)
    rng = stream(seed, "srw.clipped", N)
    active = np.ones(reps, dtype=bool)
    rows = np.arange(reps)
    while active.any():
        inner = np.all(np.abs(pos - outer) <= N, axis=1) & active
        visited[rows[inner], (pos[inner] * strides).sum(axis=1)] = True
        idx = np.nonzero(active)[0]
        axes = rng.integers(0, d, size=idx.size)
        signs = rng.choice((-1, 1), size=idx.size)
        pos[idx, axes] += signs
        gone = np.any(np.abs(pos[idx] - outer) > outer, axis=1)
        active[idx[gone]] = False
    counts = visited.sum(axis=1).astype(float)
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(reps))


# ---------------------------------------------------------------------------
# Tail bounds shared with the exact oracle
# ---------------------------------------------------------------------------

def shell_tail_bound(
    x: Sequence[int],
    L: int,
    phi1: float,
    d: int,
    half_open: bool = False,
    max_radius: int = 10_000,
) -> float:
    """
    Upper bound on Σ a(γ) over paths 0 → x longer than L (h = 0, λ = 0).

    Paths are sorted by the ℓ1 radius r they reach: such a path visits at
    least r + 1 sites, so e^{−Φ} ≤ e^{−φ(1)(r+1)}, and it stays in the box
    [−r, r]^d, where the killed walk survives t steps with probability at
    most √|box| · cos(π/(2r+2))^t.
    """
    if phi1 <= 0:
        return math.inf
    r0 = sum(abs(c) for c in x)
    total = 0.0
    for r in range(max(r0, 1), max_radius):
        sites = r + 1 - (1 if half_open else 0)
        lam = math.cos(math.pi / (2 * r + 2))
        log_term = (
            -phi1 * sites
            + 0.5 * d * math.log(2 * r + 1)
            + (L + 1) * math.log(lam)
            - math.log1p(-lam)
        )
        term = math.exp(log_term)
        total += term
        if r > r0 + 10 and term < 1e-16 * total:
            break
    return total


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def green_growth(d: int, sizes: Sequence[int]) -> List[Tuple[int, float, float]]:
    """(L, G_box(L)(0, 0), log L) for boxes of radius L."""
    rows = []
    for size in sizes:
        region = Region.box(size, d)
        rows.append((size, green_function(region, (0,) * d, (0,) * d), math.log(size)))
    return rows


def write_table(filename, rows: Iterable[Tuple[str, str, float, float]]) -> FilePath:
    """CSV with columns region, quantity, value, error."""
    target = FilePath(filename)
    with open(target, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["region", "quantity", "value", "error"])
        for region, quantity, value, error in rows:
            writer.writerow([region, quantity, repr(float(value)), repr(float(error))])
    return target
