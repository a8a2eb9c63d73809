"""
polymerlab - Exact Oracle

Exhaustive depth-first enumeration of weighted lattice paths. Local times
are pushed and popped per step, so memory stays O(n); sites are packed into
integers so the hot loop only touches ints and a flat visit-count list.
"""

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from plab_core import EnsembleConfig, Point, PotentialSpec, l1_norm, worker_count
from plab_srw import shell_tail_bound

logger = logging.getLogger(__name__)

DEFAULT_CAPS = {1: 26, 2: 14, 3: 9, 4: 7}


class EnumerationCapExceeded(ValueError):
    """Raised when an enumeration would exceed the configured size cap."""

    def __init__(self, message: str, estimated_paths: float):
        super().__init__(message)
        self.estimated_paths = estimated_paths


class _Packing:
    """Packs points of [-R, R]^d into integers base 2R+1."""

    def __init__(self, d: int, radius: int):
        self.d = d
        self.radius = radius
        self.base = 2 * radius + 1
        self.size = self.base ** d
        self.moves = []
        for i in range(d):
            stride = self.base ** i
            self.moves.extend([stride, -stride])

    def pack(self, x: Sequence[int]) -> int:
        key = 0
        for i in reversed(range(self.d)):
            key = key * self.base + (x[i] + self.radius)
        return key

    def unpack(self, key: int) -> Point:
        coords = []
        for _ in range(self.d):
            key, rem = divmod(key, self.base)
            coords.append(rem - self.radius)
        return tuple(coords)


def _check_cap(n: int, d: int, cap: Optional[int]):
    limit = DEFAULT_CAPS.get(d, 7) if cap is None else cap
    if n > limit:
        estimate = float((2 * d) ** n)
        raise EnumerationCapExceeded(
            f"Enumerating {estimate:.3g} paths (n={n}, d={d}) exceeds cap n <= {limit}",
            estimate,
        )


# ---------------------------------------------------------------------------
# Canonical ensemble
# ---------------------------------------------------------------------------

@dataclass
class PartitionResult:
    """Exact A_h^n with its endpoint breakdown (all values natural logs)."""

    n: int
    cfg: EnsembleConfig
    log_total: float
    endpoint_log: Dict[Point, float]
    paths_enumerated: int
    log_range_moment: float = -math.inf

    def endpoint_distribution(self) -> Dict[Point, float]:
        return {x: math.exp(v - self.log_total) for x, v in self.endpoint_log.items()}

    @property
    def mean_range(self) -> float:
        """Exact 𝔸_h^n(|R|)."""
        return math.exp(self.log_range_moment - self.log_total)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "d": self.cfg.d,
            "h": list(self.cfg.h),
            "lambda": self.cfg.lam,
            "phi": self.cfg.potential.describe(),
            "total_log": self.log_total,
            "paths_enumerated": self.paths_enumerated,
        }

    def write(self, output_dir, stem: str = "partition") -> List[FilePath]:
        """Write `<stem>.csv` (x_1..x_d, log_weight_sum) and `<stem>.json`."""
        out = FilePath(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = out / f"{stem}.csv"
        with open(table, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([f"x_{i + 1}" for i in range(self.cfg.d)] + ["log_weight_sum"])
            for x in sorted(self.endpoint_log):
                writer.writerow(list(x) + [repr(self.endpoint_log[x])])
        summary = out / f"{stem}.json"
        with open(summary, "w") as f:
            json.dump(self.summary(), f, indent=2)
        return [table, summary]


def _canonical_branch(args) -> Tuple[Dict[int, float], Dict[int, float], int]:
    """
    Enumerate every n-step path whose first step is `first`.

    Returns per-endpoint sums of exp(offset − Φ) and of exp(offset − Φ)·|R|,
    plus the leaf count; the caller adds back drift, killing and entropy.
    """
    n, d, phi_table, first, offset = args
    pack = _Packing(d, n + 1)
    counts = [0] * pack.size
    origin = pack.pack((0,) * d)
    counts[origin] = 1
    dphi = [phi_table[c + 1] - phi_table[c] for c in range(n + 1)]
    moves = pack.moves
    acc: Dict[int, float] = {}
    range_acc: Dict[int, float] = {}
    leaves = [0]
    exp = math.exp

    def descend(pos: int, depth: int, energy: float, sites: int):
        if depth == n:
            w = exp(offset - energy)
            acc[pos] = acc.get(pos, 0.0) + w
            range_acc[pos] = range_acc.get(pos, 0.0) + w * sites
            leaves[0] += 1
            return
        for mv in moves:
            q = pos + mv
            c = counts[q]
            counts[q] = c + 1
            descend(q, depth + 1, energy + dphi[c], sites + (c == 0))
            counts[q] = c

    q = origin + moves[first]
    counts[q] = 1
    descend(q, 1, phi_table[1] + dphi[0], 2)
    return acc, range_acc, leaves[0]


def canonical_partition(
    n: int,
    cfg: EnsembleConfig,
    cap: Optional[int] = None,
    workers: Optional[int] = None,
) -> PartitionResult:
    """
    Exact A_h^n = Σ_{|γ|=n} a_h(γ) and its endpoint breakdown.

    Args:
        n: Path length
        cfg: Ensemble parameters
        cap: Maximum n (default per dimension, 14 for d=2)
        workers: Parallel first-step branches (capped by POLYMERLAB_THREADS)

    Returns:
        PartitionResult

    Raises:
        EnumerationCapExceeded: If (2d)^n is beyond the cap
    """
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    d = cfg.d
    _check_cap(n, d, cap)
    phi_table = [cfg.potential.phi(ell) for ell in range(n + 2)]
    h = np.asarray(cfg.h)
    entropy = n * (cfg.lam + math.log(2 * d))

    if n == 0:
        origin = (0,) * d
        log_w = -phi_table[1]
        return PartitionResult(0, cfg, log_w, {origin: log_w}, 1, log_w)

    # Φ ≥ φ(n+1) by subadditivity, so exp(offset − Φ) ≤ 1
    offset = phi_table[n + 1]
    jobs = [(n, d, phi_table, k, offset) for k in range(2 * d)]
    pool_size = worker_count(workers)
    logger.debug("canonical enumeration n=%d d=%d over %d branches (%d workers)", n, d, len(jobs), pool_size)
    if pool_size > 1:
        with ProcessPoolExecutor(max_workers=pool_size) as pool:
            branches = list(pool.map(_canonical_branch, jobs))
    else:
        branches = [_canonical_branch(job) for job in jobs]

    pack = _Packing(d, n + 1)
    endpoint_terms: Dict[Point, List[float]] = {}
    range_terms: List[float] = []
    leaves = 0
    for acc, range_acc, count in branches:
        leaves += count
        for key, value in acc.items():
            x = pack.unpack(key)
            drift = float(np.dot(h, x))
            endpoint_terms.setdefault(x, []).append(math.log(value))
            range_terms.append(math.log(range_acc[key]) + drift)

    endpoint_log = {}
    for x, terms in endpoint_terms.items():
        drift = float(np.dot(h, x))
        endpoint_log[x] = float(logsumexp(terms)) - offset + drift - entropy
    log_total = float(logsumexp(list(endpoint_log.values())))
    log_range = float(logsumexp(range_terms)) - offset - entropy
    return PartitionResult(n, cfg, log_total, endpoint_log, leaves, log_range)


def mean_displacement(n: int, cfg: EnsembleConfig, cap: Optional[int] = None) -> np.ndarray:
    """Exact 𝔸_h^n(X/n)."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    result = canonical_partition(n, cfg, cap)
    dist = result.endpoint_distribution()
    return sum(p * np.asarray(x, dtype=float) for x, p in dist.items()) / n


@dataclass
class CanonicalMoments:
    """Exact 𝔸_h^n expectations used as the sampler test battery."""

    n: int
    mean_x: np.ndarray
    mean_sq: float
    mean_abs: float
    mean_range: float
    log_partition: float


def canonical_moments(n: int, cfg: EnsembleConfig, cap: Optional[int] = None) -> CanonicalMoments:
    """Exact 𝔸_h^n of X/n, |X|²/n, |X|/n and |R|."""
    result = canonical_partition(n, cfg, cap)
    dist = result.endpoint_distribution()
    xs = np.array(list(dist.keys()), dtype=float)
    ps = np.array(list(dist.values()))
    norms_sq = (xs ** 2).sum(axis=1)
    return CanonicalMoments(
        n=n,
        mean_x=(ps[:, None] * xs).sum(axis=0) / n,
        mean_sq=float((ps * norms_sq).sum() / n),
        mean_abs=float((ps * np.sqrt(norms_sq)).sum() / n),
        mean_range=result.mean_range,
        log_partition=result.log_total,
    )


def small_x_fraction(n: int, cfg: EnsembleConfig, eps: float = 0.3, cap: Optional[int] = None) -> float:
    """Weight of 𝔸_h^n on endpoints with |x| ≤ n^eps."""
    result = canonical_partition(n, cfg, cap)
    radius = n ** eps
    return sum(
        p for x, p in result.endpoint_distribution().items()
        if math.sqrt(sum(c * c for c in x)) <= radius
    )


# ---------------------------------------------------------------------------
# Two-point function
# ---------------------------------------------------------------------------

@dataclass
class TruncatedTwoPoint:
    """
    A_{≤L}(x) as an exact sum over enumerated paths, plus tail information.

    by_length[t] is log Σ_{|γ|=t} a(γ); tail_bound is the rigorous
    shell/confinement bound on the omitted lengths, tail_estimate a geometric
    extrapolation of by_length. Neither tail is included in log_value.
    """

    x: Point
    L: int
    log_value: float
    by_length: Dict[int, float] = field(default_factory=dict)
    tail_bound: float = math.inf
    tail_estimate: float = 0.0
    half_open: bool = False
    paths_enumerated: int = 0
    pruned: int = 0

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def two_point_truncated(
    x: Sequence[int],
    L: int,
    cfg: EnsembleConfig,
    half_open: bool = False,
    log_cutoff: Optional[float] = None,
    max_length: int = 24,
) -> TruncatedTwoPoint:
    """
    Σ a(γ) over paths γ: 0 → x with |γ| ≤ L.

    Branches that cannot reach x in the remaining steps are skipped. With
    log_cutoff, a branch is also dropped once its weight times the best
    possible completion (no new potential, one step per unit of remaining
    ℓ1 distance) falls below exp(log_cutoff).

    Args:
        x: Target lattice point
        L: Length cap
        cfg: Ensemble parameters (h and λ enter the weight)
        half_open: Do not charge the initial vertex
        log_cutoff: Optional branch-and-bound threshold
        max_length: Refuse L above this

    Returns:
        TruncatedTwoPoint

    Raises:
        EnumerationCapExceeded: If L > max_length
    """
    x = tuple(int(c) for c in x)
    d = cfg.d
    if len(x) != d:
        raise ValueError(f"Target {x} does not have dimension {d}")
    if L > max_length:
        raise EnumerationCapExceeded(
            f"Two-point enumeration with L={L} exceeds cap {max_length}", float((2 * d) ** L)
        )
    dist0 = l1_norm(x)
    phi_table = [cfg.potential.phi(ell) for ell in range(L + 2)]
    dphi = [phi_table[c + 1] - phi_table[c] for c in range(L + 1)]
    step_cost = cfg.lam + math.log(2 * d)
    pack = _Packing(d, L + 1)
    counts = [0] * pack.size
    origin = pack.pack((0,) * d)
    target = pack.pack(x)
    counts[origin] = 0 if half_open else 1
    coords = [0] * d
    axis_moves = [(i, s) for i in range(d) for s in (1, -1)]
    drift = float(np.dot(cfg.h, x))
    sums: Dict[int, List[float]] = {}
    stats = {"paths": 0, "pruned": 0}

    def remaining(c):
        return sum(abs(x[i] - c[i]) for i in range(d))

    def descend(pos: int, depth: int, energy: float, dist: int):
        if pos == target:
            sums.setdefault(depth, []).append(-energy - depth * step_cost + drift)
            stats["paths"] += 1
        if depth == L:
            return
        for (i, s), mv in zip(axis_moves, pack.moves):
            coords[i] += s
            nd = dist + (1 if (x[i] - coords[i]) * s < 0 else -1)
            if nd <= L - depth - 1:
                q = pos + mv
                c = counts[q]
                new_energy = energy + dphi[c]
                if log_cutoff is not None and (
                    -new_energy - (depth + 1 + nd) * step_cost + drift < log_cutoff
                ):
                    stats["pruned"] += 1
                else:
                    counts[q] = c + 1
                    descend(q, depth + 1, new_energy, nd)
                    counts[q] = c
            coords[i] -= s

    start_energy = 0.0 if half_open else phi_table[1]
    if dist0 <= L:
        descend(origin, 0, start_energy, dist0)

    by_length = {t: float(logsumexp(v)) for t, v in sorted(sums.items())}
    log_value = float(logsumexp(list(by_length.values()))) if by_length else -math.inf
    phi1 = phi_table[1]
    bound = (
        shell_tail_bound(x, L, phi1, d, half_open=half_open) * math.exp(drift)
        if phi1 > 0 else math.inf
    )
    result = TruncatedTwoPoint(
        x=x,
        L=L,
        log_value=log_value,
        by_length=by_length,
        tail_bound=bound,
        tail_estimate=_extrapolate_tail(by_length, L),
        half_open=half_open,
        paths_enumerated=stats["paths"],
        pruned=stats["pruned"],
    )
    logger.debug("two-point x=%s L=%d: %d paths, %d pruned", x, L, stats["paths"], stats["pruned"])
    return result


def _extrapolate_tail(by_length: Dict[int, float], L: int) -> float:
    """Geometric continuation of the last two same-parity length sums."""
    lengths = sorted(by_length)
    if len(lengths) < 2:
        return 0.0
    last, prev = lengths[-1], lengths[-2]
    per_block = math.exp(by_length[last] - by_length[prev])
    if per_block >= 1.0:
        return math.inf
    return math.exp(by_length[last]) * per_block / (1.0 - per_block)


def crossing_length_moments(x: Sequence[int], L: int, cfg: EnsembleConfig) -> Tuple[float, float]:
    """
    (E[T], E[T²]) under 𝔸_x restricted to |γ| ≤ L and renormalised.

    The drift factor e^{h·x} is common to all paths and cancels.
    """
    result = two_point_truncated(x, L, cfg)
    if not result.by_length:
        raise ValueError(f"No path of length <= {L} reaches {tuple(x)}")
    lengths = np.array(list(result.by_length.keys()), dtype=float)
    probs = np.exp(np.array(list(result.by_length.values())) - result.log_value)
    return float((probs * lengths).sum()), float((probs * lengths ** 2).sum())
