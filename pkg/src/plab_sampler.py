"""
polymerlab - Sampler

Monte Carlo for the canonical ensemble (fixed length n) and the crossing
ensemble (fixed endpoint x) beyond enumeration scale:

- rosenbluth-perm: tour-based pruned-enriched Rosenbluth growth; the
  per-tour weight sums are unbiased for the partition function.
- metropolis-regenerate: a uniformly chosen segment is replaced by a fresh
  simple-random-walk bridge (or a free tail) and accepted with the weight
  ratio, with a Hastings factor when the crossing length changes.
"""

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path as FilePath
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from plab_core import (
    EnsembleConfig,
    Path,
    Point,
    l1_norm,
    read_paths,
    step_codes,
    stream,
    weight,
    worker_count,
    write_paths,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("rosenbluth-perm", "metropolis-regenerate")
CROSSING_ROUTES = ("metropolis", "mixture")
REJECTION_MAX_STEPS = 16
REJECTION_ATTEMPTS = 64
DEGENERATE_MASS = 0.99


class SamplerFailure(RuntimeError):
    """Raised when a run produces no usable samples; carries the population or acceptance trace."""

    def __init__(self, message: str, trace: Optional[dict] = None):
        super().__init__(message)
        self.trace = trace or {}


@dataclass(frozen=True)
class SamplerConfig:
    """
    Sampler knobs.

    steps counts Metropolis moves per chain after burn-in, or PERM tours per
    chain; max_segment caps the regenerated segment length.
    """

    algorithm: str = "metropolis-regenerate"
    chains: int = 4
    steps: int = 20_000
    burn_in: int = 2_000
    thin: int = 10
    seed: int = 0
    enrich: float = 2.0
    prune: float = 0.5
    max_segment: int = 8
    max_length: int = 40
    crossing_route: str = "metropolis"
    mixture_rate: float = 0.9
    max_population: int = 20_000

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"Unknown algorithm '{self.algorithm}', expected one of {ALGORITHMS}")
        if self.crossing_route not in CROSSING_ROUTES:
            raise ValueError(f"Unknown crossing route '{self.crossing_route}'")
        if self.chains < 1 or self.steps < 1 or self.thin < 1 or self.burn_in < 0:
            raise ValueError("chains, steps and thin must be positive and burn_in non-negative")
        if self.enrich <= 0 or self.prune <= 0 or self.prune >= self.enrich:
            raise ValueError(f"Thresholds need 0 < prune < enrich, got {self.prune}, {self.enrich}")
        if self.max_segment < 1 or self.max_length < 1:
            raise ValueError("max_segment and max_length must be positive")
        if not 0 < self.mixture_rate < 1:
            raise ValueError(f"mixture_rate must lie in (0, 1), got {self.mixture_rate}")


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

def integrated_autocorrelation_time(trace: Sequence[float], max_lag: int = 50, cutoff: float = 0.05) -> float:
    """
    τ = 1 + 2 Σ_k ρ_k over lags k < min(max_lag, n/4), stopping at the first ρ_k < cutoff.

    Traces shorter than 10 or with zero variance give τ = 1.
    """
    x = np.asarray(trace, dtype=float)
    n = len(x)
    if n < 10:
        return 1.0
    var = float(x.var())
    if var < 1e-12:
        return 1.0
    dev = x - x.mean()
    tau = 1.0
    for k in range(1, min(max_lag, n // 4)):
        rho = float(np.mean(dev[:-k] * dev[k:])) / var
        if rho < cutoff:
            break
        tau += 2 * rho
    return max(1.0, tau)


@dataclass
class SampleBatch:
    """
    Weighted paths from one ensemble.

    groups labels the independent unit each sample came from (a chain for
    Metropolis, a tour for PERM); group_count includes groups that produced
    no sample, which matters for unnormalised PERM estimates.
    """

    kind: str
    target: object
    paths: List[Path]
    log_weights: np.ndarray
    groups: np.ndarray
    group_count: int
    algorithm: str
    diagnostics: List[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def normalized_weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    @property
    def kish_ess(self) -> float:
        """Kish effective sample size (Σw)²/Σw²."""
        if not len(self.paths):
            return 0.0
        w = self.normalized_weights
        return float(1.0 / np.sum(w * w))

    def trace(self) -> np.ndarray:
        """Per-sample scalars for mixing checks: endpoint coordinates, or the length T for crossing batches."""
        if self.kind == "crossing":
            return np.array([[p.length] for p in self.paths], dtype=float)
        return np.array([p.displacement for p in self.paths], dtype=float).reshape(len(self.paths), -1)

    @property
    def ess(self) -> float:
        """
        Effective sample size.

        PERM batches use the Kish value. Metropolis batches sum n_c/τ_c over
        chains, τ_c the largest integrated autocorrelation time among the
        trace columns of chain c, scaled by kish_ess/n when weights differ.
        """
        if self.algorithm != "metropolis-regenerate" or not len(self.paths):
            return self.kish_ess
        trace = self.trace()
        total = 0.0
        for g in np.unique(self.groups):
            chain = trace[self.groups == g]
            tau = max(integrated_autocorrelation_time(column) for column in chain.T)
            total += len(chain) / tau
        return total * self.kish_ess / len(self.paths)

    def merge(self, other: "SampleBatch") -> "SampleBatch":
        """Concatenate two batches of the same ensemble; associative."""
        if (self.kind, self.target, self.algorithm) != (other.kind, other.target, other.algorithm):
            raise ValueError("Cannot merge batches from different ensembles or algorithms")
        return SampleBatch(
            self.kind,
            self.target,
            self.paths + other.paths,
            np.concatenate([self.log_weights, other.log_weights]),
            np.concatenate([self.groups, other.groups + self.group_count]),
            self.group_count + other.group_count,
            self.algorithm,
            self.diagnostics + other.diagnostics,
        )

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "target": self.target if isinstance(self.target, int) else list(self.target),
            "algorithm": self.algorithm,
            "samples": len(self.paths),
            "groups": self.group_count,
            "ess": self.ess,
            "kish_ess": self.kish_ess,
            "diagnostics": self.diagnostics,
        }

    def write(self, output_dir, stem: str = "batch") -> List[FilePath]:
        """Paths as text, log-weights as CSV sidecar, summary as JSON."""
        out = FilePath(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = f"{self.kind} ensemble, target {self.target}, {self.algorithm}"
        files = [write_paths(out / f"{stem}.paths", self.paths, header=header)]
        weights_file = out / f"{stem}_weights.csv"
        with open(weights_file, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["index", "log_weight", "group"])
            for i, (lw, g) in enumerate(zip(self.log_weights, self.groups)):
                writer.writerow([i, repr(float(lw)), int(g)])
        files.append(weights_file)
        summary_file = out / f"{stem}.json"
        with open(summary_file, "w") as f:
            json.dump(self.summary(), f, indent=2)
        files.append(summary_file)
        return files

    @classmethod
    def read(cls, output_dir, stem: str = "batch") -> "SampleBatch":
        out = FilePath(output_dir)
        summary_file = out / f"{stem}.json"
        if not summary_file.exists():
            raise FileNotFoundError(f"Batch summary missing: {summary_file}")
        with open(summary_file) as f:
            summary = json.load(f)
        paths = read_paths(out / f"{stem}.paths")
        with open(out / f"{stem}_weights.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        if len(rows) != len(paths):
            raise ValueError(f"{stem}: {len(paths)} paths but {len(rows)} weights")
        target = summary["target"]
        return cls(
            summary["kind"],
            target if isinstance(target, int) else tuple(target),
            paths,
            np.array([float(r["log_weight"]) for r in rows]),
            np.array([int(r["group"]) for r in rows], dtype=np.int64),
            int(summary["groups"]),
            summary["algorithm"],
            summary["diagnostics"],
        )


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

@dataclass
class Estimate:
    value: float
    stderr: float
    degenerate: bool = False
    ess: float = 0.0

    def __iter__(self):
        yield self.value
        yield self.stderr


def estimate_observable(
    batch: SampleBatch,
    f: Callable[[Path], float],
    normalized: bool = True,
    blocks: int = 20,
) -> Estimate:
    """
    Importance-sampling estimate of f with a batch-means standard error.

    Self-normalised by default. With normalized=False on a PERM batch the
    result is Σ W·f per tour averaged over tours, an unbiased estimate of
    Σ_γ a(γ) f(γ) (f ≡ 1 gives the partition function).

    Raises:
        ValueError: If the effective sample size is below 2, or an
            unnormalised estimate is requested from a Metropolis batch
    """
    if batch.kish_ess < 2:
        raise ValueError(f"Effective sample size {batch.kish_ess:.3g} is below 2")
    values = np.array([f(p) for p in batch.paths], dtype=float)
    w = batch.normalized_weights
    degenerate = bool(w.max() > DEGENERATE_MASS)
    if degenerate:
        logger.warning("one sample carries %.1f%% of the weight", 100 * w.max())

    if not normalized:
        if batch.algorithm != "rosenbluth-perm":
            raise ValueError("Unnormalised estimates need PERM tour bookkeeping")
        shift = float(batch.log_weights.max())
        raw = np.exp(batch.log_weights - shift)
        per_tour = np.bincount(batch.groups, weights=raw * values, minlength=batch.group_count)
        scale = math.exp(shift)
        value = float(per_tour.mean()) * scale
        stderr = float(per_tour.std(ddof=1) / math.sqrt(batch.group_count)) * scale if batch.group_count > 1 else math.inf
        return Estimate(value, stderr, degenerate, batch.ess)

    if np.all(values == values[0]):
        return Estimate(float(values[0]), 0.0, degenerate, batch.ess)
    value = float(np.sum(w * values))
    block_ids = _block_ids(batch, blocks)
    nb = int(block_ids.max()) + 1
    if nb < 2:
        return Estimate(value, math.inf, degenerate, batch.ess)
    s = np.bincount(block_ids, weights=w * values, minlength=nb)
    t = np.bincount(block_ids, weights=w, minlength=nb)
    var = np.sum((s - value * t) ** 2) / (nb * (nb - 1) * np.mean(t) ** 2)
    return Estimate(value, float(math.sqrt(var)), degenerate, batch.ess)


def _block_ids(batch: SampleBatch, blocks: int) -> np.ndarray:
    """Contiguous blocks of groups (PERM) or of samples within each chain (Metropolis)."""
    if batch.algorithm == "rosenbluth-perm":
        nb = max(1, min(blocks, batch.group_count))
        return (batch.groups * nb) // batch.group_count
    ids = np.zeros(len(batch.paths), dtype=np.int64)
    per_chain = max(1, blocks // max(1, batch.group_count))
    for g in np.unique(batch.groups):
        idx = np.nonzero(batch.groups == g)[0]
        k = min(per_chain, len(idx))
        ids[idx] = g * per_chain + (np.arange(len(idx)) * k) // len(idx)
    _, dense = np.unique(ids, return_inverse=True)
    return dense


# ---------------------------------------------------------------------------
# Bridges
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _count(delta: Tuple[int, ...], m: int) -> int:
    if l1_norm(delta) > m or (m - l1_norm(delta)) % 2:
        return 0
    if m == 0:
        return 1
    total = 0
    for i in range(len(delta)):
        for s in (1, -1):
            shifted = list(delta)
            shifted[i] -= s
            total += _count(_canonical(shifted), m - 1)
    return total


def _canonical(delta) -> Tuple[int, ...]:
    return tuple(sorted(abs(c) for c in delta))


def bridge_count(delta: Sequence[int], m: int) -> int:
    """Number of m-step nearest-neighbour paths with displacement delta."""
    return _count(_canonical(delta), m)


def sample_bridge(delta: Sequence[int], m: int, rng: np.random.Generator) -> List[int]:
    """
    Uniform m-step path with displacement delta, as step codes.

    Short bridges are drawn by rejection from free walks; otherwise, and when
    rejection keeps failing, steps are drawn sequentially with probability
    proportional to the number of completions.
    """
    delta = tuple(int(c) for c in delta)
    d = len(delta)
    if bridge_count(delta, m) == 0:
        raise ValueError(f"No {m}-step path has displacement {delta}")
    codes = np.array(step_codes(d))
    if m <= REJECTION_MAX_STEPS:
        for _ in range(REJECTION_ATTEMPTS):
            steps = codes[rng.integers(0, 2 * d, size=m)]
            end = np.zeros(d, dtype=np.int64)
            np.add.at(end, np.abs(steps) - 1, np.sign(steps))
            if tuple(end) == delta:
                return [int(s) for s in steps]
    remaining = list(delta)
    steps = []
    for left in range(m, 0, -1):
        counts = []
        for code in codes:
            nxt = list(remaining)
            nxt[abs(code) - 1] -= 1 if code > 0 else -1
            counts.append(bridge_count(nxt, left - 1))
        probs = np.array(counts, dtype=float)
        choice = int(rng.choice(len(codes), p=probs / probs.sum()))
        code = int(codes[choice])
        remaining[abs(code) - 1] -= 1 if code > 0 else -1
        steps.append(code)
    return steps


# ---------------------------------------------------------------------------
# Metropolis proposal algebra
# ---------------------------------------------------------------------------

def _segment_log_prob(T: int, i: int, M: int) -> float:
    return -math.log(T) - math.log(min(M, T - i))


def proposal_log_prob(path: Path, new_path: Path, i: int, m: int, m_new: int, M: int, crossing: bool) -> float:
    """
    log q(γ → γ′) for regenerating γ[i, i+m] into m_new steps.

    Canonical moves keep m_new = m; a segment reaching the end of a
    canonical path is redrawn as a free walk.
    """
    T = path.length
    lp = _segment_log_prob(T, i, M)
    if crossing:
        lp -= math.log(3)
    if not crossing and i + m == T:
        return lp - m_new * math.log(2 * path.d)
    delta = np.subtract(path.vertices[i + m], path.vertices[i])
    return lp - math.log(bridge_count(delta, m_new))


def hastings_log_ratio(T: int, i: int, m: int, m_new: int, M: int, delta: Sequence[int], d: int,
                       crossing: bool, tail: bool) -> float:
    """log q(γ′ → γ) − log q(γ → γ′) for a segment move from length T to T − m + m_new."""
    if tail and not crossing:
        return 0.0
    T_new = T - m + m_new
    ratio = _segment_log_prob(T_new, i, M) - _segment_log_prob(T, i, M)
    return ratio + math.log(bridge_count(delta, m_new)) - math.log(bridge_count(delta, m))


def log_acceptance(path: Path, new_path: Path, i: int, m: int, m_new: int, cfg: EnsembleConfig, M: int,
                   crossing: bool) -> float:
    """log α(γ → γ′) = min(0, log a(γ′) − log a(γ) + Hastings ratio)."""
    tail = not crossing and i + m == path.length
    delta = np.subtract(path.vertices[i + m], path.vertices[i])
    log_ratio = (
        weight(new_path, cfg.potential, cfg.weights)
        - weight(path, cfg.potential, cfg.weights)
        + hastings_log_ratio(path.length, i, m, m_new, M, delta, path.d, crossing, tail)
    )
    return min(0.0, log_ratio)


# ---------------------------------------------------------------------------
# Metropolis chains
# ---------------------------------------------------------------------------

class _ChainState:
    """Vertices, site counts and energy of the current path."""

    def __init__(self, path: Path, table: np.ndarray):
        self.steps = list(path.steps)
        self.verts = list(path.vertices)
        self.table = table
        self.counts: Dict[Point, int] = {}
        for v in self.verts:
            self.counts[v] = self.counts.get(v, 0) + 1

    def energy_change(self, removed: Sequence[Point], added: Sequence[Point]) -> float:
        delta: Dict[Point, int] = {}
        for v in removed:
            delta[v] = delta.get(v, 0) - 1
        for v in added:
            delta[v] = delta.get(v, 0) + 1
        table = self.table
        total = 0.0
        for v, dv in delta.items():
            if dv:
                c = self.counts.get(v, 0)
                total += table[c + dv] - table[c]
        return total

    def replace(self, i: int, m: int, new_steps: List[int], new_verts: List[Point]):
        for v in self.verts[i + 1:i + m + 1]:
            self.counts[v] -= 1
        for v in new_verts:
            self.counts[v] = self.counts.get(v, 0) + 1
        self.steps[i:i + m] = new_steps
        self.verts[i + 1:i + m + 1] = new_verts

    def path(self) -> Path:
        return Path(self.verts[0], tuple(self.steps))


def _walk(start: Point, steps: Sequence[int]) -> List[Point]:
    out = []
    cur = list(start)
    for s in steps:
        cur[abs(s) - 1] += 1 if s > 0 else -1
        out.append(tuple(cur))
    return out


def _initial_path(kind: str, target, cfg: EnsembleConfig) -> Path:
    d = cfg.d
    if kind == "canonical":
        axis = int(np.argmax(np.abs(cfg.h))) + 1
        sign = 1 if cfg.h[axis - 1] >= 0 else -1
        return Path((0,) * d, (sign * axis,) * target)
    steps = []
    for i, c in enumerate(target):
        steps += [(i + 1) if c > 0 else -(i + 1)] * abs(c)
    return Path((0,) * d, tuple(steps))


def _metropolis_chain(args) -> Tuple[List[Path], dict]:
    kind, target, cfg, s, chain = args
    crossing = kind == "crossing"
    rng = stream(s.seed, "sampler.metropolis", chain)
    d = cfg.d
    M = s.max_segment
    step_cost = cfg.lam + math.log(2 * d)
    h = np.asarray(cfg.h)
    state = _ChainState(_initial_path(kind, target, cfg), cfg.potential.table(s.max_length + 2 if crossing else target + 2))
    codes = step_codes(d)
    samples: List[Path] = []
    accepted = proposed = 0
    total = s.burn_in + s.steps
    for move in range(total):
        T = len(state.steps)
        i = int(rng.integers(0, T))
        m = int(rng.integers(1, min(M, T - i) + 1))
        tail = not crossing and i + m == T
        start = state.verts[i]
        end = state.verts[i + m]
        delta = tuple(b - a for a, b in zip(start, end))
        m_new = m + (int(rng.integers(0, 3)) - 1) * 2 if crossing else m
        proposed += 1
        # the reverse move must be proposable: 1 <= m_new <= M, length within max_length
        feasible = not crossing or (
            1 <= m_new <= M and m_new >= l1_norm(delta) and T - m + m_new <= s.max_length
        )
        if feasible:
            if tail:
                new_steps = [codes[k] for k in rng.integers(0, 2 * d, size=m)]
            else:
                new_steps = sample_bridge(delta, m_new, rng)
            new_verts = _walk(start, new_steps)
            if tail:
                removed, added = state.verts[i + 1:], new_verts
            else:
                removed, added = state.verts[i + 1:i + m], new_verts[:-1]
            log_ratio = -state.energy_change(removed, added)
            if tail:
                log_ratio += float(h @ np.subtract(new_verts[-1], end))
            log_ratio -= (m_new - m) * step_cost
            log_ratio += hastings_log_ratio(T, i, m, m_new, M, delta, d, crossing, tail)
            if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
                state.replace(i, m, new_steps, new_verts)
                accepted += 1
        if move >= s.burn_in and (move - s.burn_in) % s.thin == 0:
            samples.append(state.path())
    diagnostics = {"chain": chain, "proposed": proposed, "accepted": accepted,
                   "acceptance": accepted / max(proposed, 1)}
    logger.debug("metropolis chain %d: acceptance %.3f", chain, diagnostics["acceptance"])
    return samples, diagnostics


# ---------------------------------------------------------------------------
# PERM tours
# ---------------------------------------------------------------------------

def _perm_chain(args) -> Tuple[List[Tuple[Path, float, int]], dict]:
    """
    Tours of pruned-enriched Rosenbluth growth.

    Thresholds for a tour come from the weight averages of earlier tours of
    the same chain, so each tour's weight sum is unbiased. For crossings a
    tour grows up to a geometric length cap t* and a walker at x at length t
    is recorded with weight W / P(t* ≥ t).
    """
    kind, target, cfg, s, chain = args
    crossing = kind == "crossing"
    d = cfg.d
    n_max = s.max_length if crossing else target
    x = tuple(target) if crossing else None
    table = cfg.potential.table(n_max + 2)
    dphi = table[1:] - table[:-1]
    codes = step_codes(d)
    moves = [(abs(c) - 1, 1 if c > 0 else -1) for c in codes]
    drift_terms = np.array([cfg.h[a] * sgn for a, sgn in moves]) - cfg.lam - math.log(2 * d)
    weight_sums = np.zeros(n_max + 1)
    first_length = l1_norm(x) if crossing else n_max
    survival = _geometric_survival(first_length, n_max, s.mixture_rate) if crossing else None
    samples: List[Tuple[Path, float, int]] = []
    stats = {"chain": chain, "tours": s.steps, "enriched": 0, "pruned": 0, "completed": 0,
             "max_population": 0}

    for tour in range(s.steps):
        rng = stream(s.seed, "sampler.perm", chain, tour)
        averages = weight_sums / tour if tour else None
        cap = n_max
        if crossing:
            cap = first_length + int(rng.geometric(1 - s.mixture_rate)) - 1
            cap = min(cap, n_max)
        counts: Dict[Point, int] = {(0,) * d: 1}
        pos = [0] * d
        steps: List[int] = []
        tour_stats = {"population": 0}
        tour_sums = np.zeros(n_max + 1)

        def record(t: int, log_w: float):
            tour_sums[t] += math.exp(log_w)
            if crossing and tuple(pos) == x:
                samples.append((Path((0,) * d, tuple(steps)), log_w - math.log(survival[t]), chain * s.steps + tour))
            elif not crossing and t == n_max:
                samples.append((Path((0,) * d, tuple(steps)), log_w, chain * s.steps + tour))

        def grow(t: int, log_w: float):
            record(t, log_w)
            if t == cap:
                return
            if crossing and sum(abs(a - b) for a, b in zip(pos, x)) > cap - t:
                return
            copies = 1
            if averages is not None and averages[t] > 0:
                w = math.exp(log_w)
                if w > s.enrich * averages[t] and tour_stats["population"] < s.max_population:
                    copies = 2
                    log_w -= math.log(2)
                    stats["enriched"] += 1
                elif w < s.prune * averages[t]:
                    if rng.random() < 0.5:
                        stats["pruned"] += 1
                        return
                    log_w += math.log(2)
            for _ in range(copies):
                tour_stats["population"] += 1
                logs = np.empty(len(moves))
                for k, (a, sgn) in enumerate(moves):
                    pos[a] += sgn
                    logs[k] = -dphi[counts.get(tuple(pos), 0)] + drift_terms[k]
                    pos[a] -= sgn
                top = logs.max()
                probs = np.exp(logs - top)
                total = probs.sum()
                k = int(rng.choice(len(moves), p=probs / total))
                a, sgn = moves[k]
                pos[a] += sgn
                site = tuple(pos)
                counts[site] = counts.get(site, 0) + 1
                steps.append(codes[k])
                grow(t + 1, log_w + top + math.log(total))
                steps.pop()
                counts[site] -= 1
                pos[a] -= sgn

        grow(0, -table[1])
        weight_sums += tour_sums
        stats["max_population"] = max(stats["max_population"], tour_stats["population"])
    stats["completed"] = len(samples)
    stats["average_weight"] = [float(v) for v in weight_sums / s.steps]
    logger.debug("perm chain %d: %d samples from %d tours", chain, len(samples), s.steps)
    return samples, stats


def _geometric_survival(first: int, last: int, rate: float) -> np.ndarray:
    """P(t* ≥ t) for t* = first + Geometric(1 − rate) − 1 capped at last, indexed by t."""
    t = np.arange(last + 1)
    return np.where(t <= first, 1.0, rate ** np.maximum(t - first, 0))


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def _run_chains(job, args: list) -> list:
    pool_size = worker_count(len(args))
    if pool_size > 1:
        with ProcessPoolExecutor(max_workers=pool_size) as pool:
            return list(pool.map(job, args))
    return [job(a) for a in args]


def _collect(kind: str, target, cfg: EnsembleConfig, s: SamplerConfig, algorithm: str) -> SampleBatch:
    args = [(kind, target, cfg, s, chain) for chain in range(s.chains)]
    if algorithm == "metropolis-regenerate":
        results = _run_chains(_metropolis_chain, args)
        paths, groups, diagnostics = [], [], []
        for chain, (samples, diag) in enumerate(results):
            paths += samples
            groups += [chain] * len(samples)
            diagnostics.append(diag)
        batch = SampleBatch(kind, target, paths, np.zeros(len(paths)), np.array(groups, dtype=np.int64),
                            s.chains, algorithm, diagnostics)
    else:
        results = _run_chains(_perm_chain, args)
        paths, log_w, groups, diagnostics = [], [], [], []
        for samples, diag in results:
            for p, lw, g in samples:
                paths.append(p)
                log_w.append(lw)
                groups.append(g)
            diagnostics.append(diag)
        if not paths:
            raise SamplerFailure(f"All PERM tours died before reaching the {kind} target {target}",
                                 {"chains": diagnostics})
        batch = SampleBatch(kind, target, paths, np.array(log_w), np.array(groups, dtype=np.int64),
                            s.chains * s.steps, algorithm, diagnostics)
    if batch.kish_ess <= 0:
        raise SamplerFailure("Zero effective sample size", {"chains": batch.diagnostics})
    logger.info("%s sampling of %s: %d samples, ess %.1f", kind, target, len(batch), batch.ess)
    return batch


def sample_canonical(n: int, cfg: EnsembleConfig, s: SamplerConfig = SamplerConfig()) -> SampleBatch:
    """
    Weighted samples of 𝔸_h^n.

    Args:
        n: Path length, at least 1
        cfg: Ensemble parameters
        s: Sampler configuration

    Returns:
        SampleBatch whose paths all have length n

    Raises:
        SamplerFailure: If every PERM tour is pruned
    """
    if n < 1:
        raise ValueError(f"Canonical sampling needs n >= 1, got {n}")
    return _collect("canonical", int(n), cfg, s, s.algorithm)


def sample_crossing(x: Sequence[int], cfg: EnsembleConfig, s: SamplerConfig = SamplerConfig()) -> SampleBatch:
    """
    Weighted samples of 𝔸_x restricted to lengths ≤ s.max_length.

    The fixed-endpoint Metropolis chain is the default route; the "mixture"
    route runs PERM tours over geometric length caps and keeps the walkers
    that sit at x.

    Raises:
        SamplerFailure: If no path reaching x fits within max_length
    """
    x = tuple(int(c) for c in x)
    if len(x) != cfg.d:
        raise ValueError(f"Target {x} does not have dimension {cfg.d}")
    if not any(x):
        raise ValueError("Crossing target must be non-zero")
    if l1_norm(x) > s.max_length:
        raise SamplerFailure(f"No path of length <= {s.max_length} reaches {x}", {"distance": l1_norm(x)})
    algorithm = "metropolis-regenerate" if s.crossing_route == "metropolis" else "rosenbluth-perm"
    return _collect("crossing", x, cfg, s, algorithm)
