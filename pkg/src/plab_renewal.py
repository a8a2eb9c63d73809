"""
polymerlab - Renewal structure

h-cone points, the irreducible decomposition γ_b ⨿ γ_1 ⨿ ... ⨿ γ_N ⨿ γ_f,
exact enumeration of irreducible pieces and the statistics of the effective
renewal walk built from them.

Weight bookkeeping: every piece except γ_b drops its initial vertex from the
local-time field, so log-weights of the pieces add up to the log-weight of
the path. Index 0 may be a cone point but never splits the path: γ_b always
has at least one step.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path as FilePath
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize, stats

from plab_core import (
    EnsembleConfig,
    Path,
    Point,
    l1_norm,
    local_times,
    read_paths,
    step_codes,
    stream,
    weight,
    write_paths,
)
from plab_geometry import TOL, ConeSpec, CriticalShape
from plab_oracle import crossing_length_moments
from plab_sampler import SamplerConfig, estimate_observable, sample_crossing

logger = logging.getLogger(__name__)

LOW_CONFIDENCE_PIECES = 100
PIECE_KINDS = ("middle", "backward", "forward")


class NotEnoughConePoints(ValueError):
    """Fewer than two h-cone points: the path has no irreducible decomposition."""

    def __init__(self, message: str, count: int):
        super().__init__(message)
        self.count = count


# ---------------------------------------------------------------------------
# Cone points
# ---------------------------------------------------------------------------

@dataclass
class ConePointReport:
    path: Path
    h: Tuple[float, ...]
    cone: ConeSpec
    indices: List[int]
    margins: List[float] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.indices)


def _hull2d(points: np.ndarray) -> np.ndarray:
    """Vertices of the convex hull of integer points (monotone chain, collinear points dropped)."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b) -> int:
        return int((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))

    def half(seq):
        out: list = []
        for p in seq:
            while len(out) >= 2 and cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _once(path: Path) -> np.ndarray:
    counts = local_times(path)
    return np.array([counts[v] == 1 for v in path.vertices])


def _min_margin(cone: ConeSpec, rel: np.ndarray) -> float:
    if not len(rel):
        return math.inf
    return float(cone.conservative_margin_many(rel).min())


def _reference_scan(path: Path, cone: ConeSpec, ordered: bool) -> Tuple[List[int], List[float]]:
    verts = path.vertex_array
    once = _once(path)
    indices, margins = [], []
    for k in range(len(verts)):
        if not once[k]:
            continue
        u = verts[k]
        if ordered:
            margin = min(_min_margin(cone, u - verts[:k]), _min_margin(cone, verts[k + 1:] - u))
        else:
            rel = np.delete(verts, k, axis=0) - u
            if not len(rel):
                margin = math.inf
            else:
                margin = float(np.maximum(cone.conservative_margin_many(rel),
                                          cone.conservative_margin_many(-rel)).min())
        if margin >= -TOL:
            indices.append(k)
            margins.append(margin)
    return indices, margins


def _incremental_scan(path: Path, cone: ConeSpec) -> Tuple[List[int], List[float]]:
    """
    Ordered cone points via prefix and suffix hulls (d = 2).

    Conservative membership is a concave condition, so a vertex set lies in
    the cone iff its hull vertices do.
    """
    verts = path.vertex_array
    n = len(verts)
    once = _once(path)
    prefix: List[np.ndarray] = [np.zeros((0, 2), dtype=np.int64)]
    for k in range(1, n):
        prefix.append(_hull2d(np.vstack([prefix[-1], verts[k - 1:k]])))
    suffix: List[Optional[np.ndarray]] = [None] * n
    suffix[n - 1] = np.zeros((0, 2), dtype=np.int64)
    for k in range(n - 2, -1, -1):
        suffix[k] = _hull2d(np.vstack([suffix[k + 1], verts[k + 1:k + 2]]))
    indices, margins = [], []
    for k in range(n):
        if not once[k]:
            continue
        u = verts[k]
        margin = min(_min_margin(cone, u - prefix[k]), _min_margin(cone, suffix[k] - u))
        if margin >= -TOL:
            indices.append(k)
            margins.append(margin)
    return indices, margins


def find_cone_points(path: Path, cone: ConeSpec, method: str = "incremental", ordered: bool = True) -> ConePointReport:
    """
    h-cone points of a path with conservative (upper-bracket) cone membership.

    An index k qualifies when γ(k) is visited once, the earlier vertices
    lie in γ(k) − Ỹ_h and the later ones in γ(k) + Ỹ_h. With ordered=False
    every vertex only needs to lie in (γ(k) − Ỹ_h) ∪ (γ(k) + Ỹ_h).

    The default is the ordered set, a subset of the union one. The two differ
    on paths that run against h: there the earlier vertices sit ahead of
    γ(k), and splitting at such a point would not give pieces confined to
    the diamond (u_i + Ỹ_h) ∩ (u_{i+1} − Ỹ_h). decompose always uses the
    ordered set.

    Args:
        path: Lattice path
        cone: Cone with its drift and apertures
        method: "incremental" (hull scan, d=2 ordered) or "reference" (all pairs)
        ordered: Use the ordered containment

    Returns:
        ConePointReport
    """
    if path.d != cone.d:
        raise ValueError(f"Path dimension {path.d} does not match cone dimension {cone.d}")
    if method not in ("incremental", "reference"):
        raise ValueError(f"Unknown cone-point method '{method}'")
    if method == "incremental" and ordered and path.d == 2:
        indices, margins = _incremental_scan(path, cone)
    else:
        indices, margins = _reference_scan(path, cone, ordered)
    return ConePointReport(path, tuple(cone.h), cone, indices, margins)


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------

@dataclass
class Piece:
    path: Path
    X: Point
    T: int
    log_weight: float


@dataclass
class IrreducibleDecomposition:
    path: Path
    cone_points: List[int]
    backward: Piece
    middle: List[Piece]
    forward: Piece
    cfg: EnsembleConfig

    @property
    def pieces(self) -> List[Piece]:
        return [self.backward] + self.middle + [self.forward]

    def reassemble(self) -> Path:
        out = self.backward.path
        for piece in self.middle + [self.forward]:
            out = out.concat(piece.path)
        return out

    def log_weight_sum(self) -> float:
        return math.fsum(p.log_weight for p in self.pieces)

    def factorization_error(self, cfg: Optional[EnsembleConfig] = None) -> float:
        """
        Relative mismatch between log a_h(γ) and the summed piece log-weights.

        The pieces carry the cone drift, so a given cfg only contributes its
        potential and killing rate.
        """
        cfg = self.cfg if cfg is None else cfg.with_drift(self.cfg.h)
        total = weight(self.path, cfg.potential, cfg.weights)
        return abs(total - self.log_weight_sum()) / max(1.0, abs(total))

    def diamond_ok(self, cone: ConeSpec) -> bool:
        """Every middle piece lies in (u_i + Ỹ_h) ∩ (u_{i+1} − Ỹ_h)."""
        for piece in self.middle:
            verts = piece.path.vertex_array
            if not (np.all(cone.conservative_many(verts - verts[0]))
                    and np.all(cone.conservative_many(verts[-1] - verts))):
                return False
        return True


def _piece(path: Path, cfg: EnsembleConfig, half_open: bool) -> Piece:
    return Piece(path, path.displacement, path.length,
                 weight(path, cfg.potential, cfg.weights, skip_first=half_open))


def decompose(path: Path, cone: ConeSpec, cfg: Optional[EnsembleConfig] = None,
              report: Optional[ConePointReport] = None) -> IrreducibleDecomposition:
    """
    Split a path at its consecutive h-cone points.

    A cone point at index 0 counts towards the two required ones but does
    not split, so γ_b ends at the first cone point after the start.

    Args:
        path: Lattice path
        cone: Cone whose drift is used for the weights
        cfg: Potential and killing rate (defaults to EnsembleConfig in d)
        report: Precomputed cone points

    Raises:
        NotEnoughConePoints: If the path has fewer than two cone points
    """
    cfg = (cfg or EnsembleConfig(d=path.d)).with_drift(cone.h)
    report = report or find_cone_points(path, cone)
    if report.count < 2:
        raise NotEnoughConePoints(f"Path has {report.count} cone point(s), need at least 2", report.count)
    splits = [k for k in report.indices if k > 0]
    backward = _piece(path.sub(0, splits[0]), cfg, half_open=False)
    middle = [_piece(path.sub(a, b), cfg, half_open=True) for a, b in zip(splits[:-1], splits[1:])]
    forward = _piece(path.sub(splits[-1], path.length), cfg, half_open=True)
    return IrreducibleDecomposition(path, report.indices, backward, middle, forward, cfg)


# ---------------------------------------------------------------------------
# Exact enumeration of irreducible pieces
# ---------------------------------------------------------------------------

class _ConeTable:
    """Conservative Ỹ_h membership of every lattice offset in [−r, r]^d."""

    def __init__(self, cone: ConeSpec, radius: int):
        d = cone.d
        self.r = radius
        grid = np.array(list(product(range(-radius, radius + 1), repeat=d)), dtype=np.int64)
        self.table = cone.conservative_many(grid, tilde=True).reshape((2 * radius + 1,) * d)

    def member(self, offsets: np.ndarray) -> np.ndarray:
        idx = np.moveaxis(offsets + self.r, -1, 0)
        return self.table[tuple(idx)]


def _interior_cone_free(verts: np.ndarray, table: _ConeTable, upto: int) -> bool:
    """No index in 1..upto is an ordered cone point of the vertex sequence."""
    n = len(verts)
    diff = verts[None, :, :] - verts[:, None, :]
    fwd = table.member(diff)
    bwd = table.member(-diff)
    keys = [tuple(v) for v in verts.tolist()]
    counts: Dict[tuple, int] = {}
    for key in keys:
        counts[key] = counts.get(key, 0) + 1
    for k in range(1, upto + 1):
        if counts[keys[k]] != 1:
            continue
        if bwd[k, :k].all() and (k == n - 1 or fwd[k, k + 1:].all()):
            return False
    return True


def enumerate_irreducible(cone: ConeSpec, cfg: EnsembleConfig, L: int, kind: str = "middle") -> Iterator[Piece]:
    """
    All irreducible pieces of length ≤ L starting at the origin.

    middle: ℓ(u_0) = ℓ(u_n) = 1, γ inside the diamond D_h(0; u_n), no
    other cone points. backward: ends at its only cone point, γ ⊂ u_n − Ỹ_h,
    full weight. forward: γ ⊂ Ỹ_h with no cone point after u_0 (the
    zero-step path included).
    """
    if kind not in PIECE_KINDS:
        raise ValueError(f"Unknown piece kind '{kind}', expected one of {PIECE_KINDS}")
    d = cone.d
    cfg = cfg.with_drift(cone.h)
    table = _ConeTable(cone, L)
    phi = cfg.potential.table(L + 2)
    h = np.asarray(cone.h)
    codes = step_codes(d)
    step_cost = cfg.lam + math.log(2 * d)
    sign = -1 if kind == "backward" else 1
    origin = (0,) * d
    verts: List[Point] = [origin]
    counts: Dict[Point, int] = {origin: 1}
    steps: List[int] = []
    charge_origin = kind == "backward"

    def emit() -> Optional[Piece]:
        n = len(steps)
        arr = np.asarray(verts, dtype=np.int64)
        if kind == "middle":
            if n == 0 or counts[verts[-1]] != 1 or not table.member(arr[-1] - arr).all():
                return None
            if not _interior_cone_free(arr, table, n - 1):
                return None
            path = Path(origin, tuple(steps))
        elif kind == "forward":
            if not _interior_cone_free(arr, table, n):
                return None
            path = Path(origin, tuple(steps))
        else:
            if n == 0:
                return None
            # walked backwards from the cone point; re-anchor the time-ordered piece at the origin
            path = Path(origin, Path(origin, tuple(steps)).reversed().steps)
            if not _interior_cone_free(path.vertex_array, table, n - 1):
                return None
        energy = math.fsum(phi[c] for v, c in counts.items() if charge_origin or v != origin)
        disp = path.displacement
        log_w = -energy + float(h @ np.asarray(disp)) - n * step_cost
        return Piece(path, disp, n, log_w)

    def descend() -> Iterator[Piece]:
        piece = emit()
        if piece is not None:
            yield piece
        if len(steps) == L:
            return
        for code in codes:
            nxt = list(verts[-1])
            nxt[abs(code) - 1] += 1 if code > 0 else -1
            site = tuple(nxt)
            if site == origin or not table.member(np.asarray(site) * sign):
                continue
            verts.append(site)
            steps.append(code)
            counts[site] = counts.get(site, 0) + 1
            yield from descend()
            counts[site] -= 1
            if not counts[site]:
                del counts[site]
            steps.pop()
            verts.pop()

    yield from descend()


# ---------------------------------------------------------------------------
# Renewal statistics
# ---------------------------------------------------------------------------

@dataclass
class RenewalStats:
    """
    Piece distribution (xs, ts, probs) and its renewal summaries.

    covariance is Cov(X − vT)/E T; normalization maps a length cap to the
    partial sum of irreducible weights.
    """

    xs: np.ndarray
    ts: np.ndarray
    probs: np.ndarray
    mean_x: np.ndarray
    mean_t: float
    velocity: np.ndarray
    covariance: np.ndarray
    velocity_stderr: np.ndarray
    kappa_x: float = math.nan
    kappa_t: float = math.nan
    t_exponent: float = math.nan
    normalization: Dict[int, float] = field(default_factory=dict)
    extrapolated_total: float = math.nan
    low_confidence: bool = False
    source: str = "enumeration"

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    @property
    def pieces(self) -> int:
        return len(self.ts)

    @classmethod
    def from_pieces(cls, xs, ts, weights, source: str = "synthetic", ess: Optional[float] = None) -> "RenewalStats":
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ts = np.asarray(ts, dtype=float)
        probs = np.asarray(weights, dtype=float)
        probs = probs / probs.sum()
        mean_x = probs @ xs
        mean_t = float(probs @ ts)
        velocity = mean_x / mean_t
        centred = xs - np.outer(ts, velocity)
        covariance = (centred.T * probs) @ centred / mean_t
        covariance = 0.5 * (covariance + covariance.T)
        ess = ess if ess is not None else 1.0 / float(np.sum(probs ** 2))
        var_x = probs @ (xs - mean_x) ** 2
        velocity_stderr = np.sqrt(var_x / max(ess, 1.0)) / mean_t
        kappa_x, kappa_t, t_exponent = _tail_fits(xs, ts, probs)
        return cls(xs, ts, probs, mean_x, mean_t, velocity, covariance, velocity_stderr,
                   kappa_x, kappa_t, t_exponent, source=source,
                   low_confidence=len(ts) < LOW_CONFIDENCE_PIECES)

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "pieces": self.pieces,
            "mean_x": self.mean_x.tolist(),
            "mean_t": self.mean_t,
            "velocity": self.velocity.tolist(),
            "velocity_stderr": self.velocity_stderr.tolist(),
            "covariance": self.covariance.tolist(),
            "kappa_x": self.kappa_x,
            "kappa_t": self.kappa_t,
            "t_exponent": self.t_exponent,
            "normalization": {str(k): v for k, v in self.normalization.items()},
            "extrapolated_total": self.extrapolated_total,
            "low_confidence": self.low_confidence,
        }

    def save(self, filename) -> FilePath:
        target = FilePath(filename)
        with open(target, "w") as f:
            json.dump(self.to_json(), f, indent=2)
        return target


def _survival(values: np.ndarray, probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values)
    v, p = values[order], probs[order]
    uniq, first = np.unique(v, return_index=True)
    tail = np.cumsum(p[::-1])[::-1]
    return uniq, tail[first]


def _tail_fits(xs: np.ndarray, ts: np.ndarray, probs: np.ndarray) -> Tuple[float, float, float]:
    """Exponential rate of |X|, stretched rate against t^{1/3}, and the free stretch exponent of T."""
    kappa_x = kappa_t = t_exponent = math.nan
    u, s = _survival(np.linalg.norm(xs, axis=1), probs)
    keep = (s > 0) & (u > 0)
    if keep.sum() >= 3:
        kappa_x = -stats.linregress(u[keep], np.log(s[keep])).slope
    u, s = _survival(ts, probs)
    keep = (s > 0) & (u > 0)
    if keep.sum() >= 3:
        kappa_t = -stats.linregress(np.cbrt(u[keep]), np.log(s[keep])).slope
    inner = keep & (s < 1)
    if inner.sum() >= 3:
        t_exponent = stats.linregress(np.log(u[inner]), np.log(-np.log(s[inner]))).slope
    return float(kappa_x), float(kappa_t), float(t_exponent)


def _stretched_extrapolation(by_length: Dict[int, float], L: int, horizon: int = 100_000) -> float:
    """Σ_{t>L} of a fit log c_t = a − b t^{1/3} over the second half of the lengths."""
    lengths = np.array([t for t in sorted(by_length) if by_length[t] > 0])
    if len(lengths) < 3:
        return math.inf
    tail = lengths[len(lengths) // 2:]
    if len(tail) < 2:
        tail = lengths[-2:]
    fit = stats.linregress(np.cbrt(tail), np.log([by_length[t] for t in tail]))
    if fit.slope >= 0:
        return math.inf
    t = np.arange(L + 1, L + horizon, dtype=float)
    return float(np.exp(fit.intercept + fit.slope * np.cbrt(t)).sum())


def irreducible_census(cone: ConeSpec, cfg: EnsembleConfig, L: int, batch=None) -> RenewalStats:
    """
    Renewal statistics from irreducible pieces.

    The normalisation partial sums Σ_{|γ|≤t} a_h(γ) always come from exact
    enumeration up to L. The piece distribution comes from that enumeration
    or, when a batch is given, from the middle pieces of its decomposable
    paths weighted by their sample weights.
    """
    pieces = list(enumerate_irreducible(cone, cfg, L, "middle"))
    by_length: Dict[int, float] = {}
    for p in pieces:
        by_length[p.T] = by_length.get(p.T, 0.0) + math.exp(p.log_weight)
    normalization, running = {}, 0.0
    for t in range(1, L + 1):
        running += by_length.get(t, 0.0)
        normalization[t] = running

    if batch is None:
        if not pieces:
            raise ValueError(f"No irreducible piece of length <= {L}")
        xs = np.array([p.X for p in pieces])
        ts = np.array([p.T for p in pieces])
        weights = np.exp([p.log_weight for p in pieces])
        result = RenewalStats.from_pieces(xs, ts, weights, source="enumeration")
        # truncation error bar: change of the velocity when the longest pieces are dropped
        shorter = ts < L
        if shorter.any() and not shorter.all():
            previous = RenewalStats.from_pieces(xs[shorter], ts[shorter], weights[shorter])
            result.velocity_stderr = np.abs(result.velocity - previous.velocity)
    else:
        xs, ts, weights = [], [], []
        failures = 0
        for path, w in zip(batch.paths, batch.normalized_weights):
            try:
                dec = decompose(path, cone, cfg)
            except NotEnoughConePoints:
                failures += 1
                continue
            for piece in dec.middle:
                xs.append(piece.X)
                ts.append(piece.T)
                weights.append(w)
        if not ts:
            raise NotEnoughConePoints("No path in the batch decomposes", 0)
        if failures:
            logger.info("%d of %d paths have fewer than two cone points", failures, len(batch.paths))
        result = RenewalStats.from_pieces(np.array(xs), np.array(ts), np.array(weights), source="batch",
                                          ess=batch.ess)
    result.normalization = normalization
    result.extrapolated_total = normalization[L] + _stretched_extrapolation(by_length, L)
    if result.low_confidence:
        logger.warning("renewal statistics rest on %d pieces only", result.pieces)
    return result


@dataclass
class BoundaryWeights:
    backward: float
    forward: float
    backward_by_length: Dict[int, float]
    forward_by_length: Dict[int, float]


def boundary_weights(cone: ConeSpec, cfg: EnsembleConfig, L: int) -> BoundaryWeights:
    """Truncated Σ a_h over backward and forward irreducible paths (C_b, C_f)."""
    result = []
    for kind in ("backward", "forward"):
        by_length: Dict[int, float] = {}
        for p in enumerate_irreducible(cone, cfg, L, kind):
            by_length[p.T] = by_length.get(p.T, 0.0) + math.exp(p.log_weight)
        result.append(by_length)
    return BoundaryWeights(math.fsum(result[0].values()), math.fsum(result[1].values()), result[0], result[1])


def partition_asymptotics(stats_: RenewalStats, weights: BoundaryWeights, log_partition: float) -> dict:
    """Compare A_h^n (from the exact oracle) with the renewal prediction C_b·C_f / E_h T."""
    predicted = weights.backward * weights.forward / stats_.mean_t
    return {
        "log_partition": log_partition,
        "log_predicted": math.log(predicted),
        "ratio": math.exp(log_partition) / predicted,
    }


# ---------------------------------------------------------------------------
# Renewal CLT and velocities
# ---------------------------------------------------------------------------

@dataclass
class CLTReport:
    n: int
    reps: int
    distances: List[float]
    covariance: np.ndarray
    covariance_stderr: np.ndarray
    expected: np.ndarray
    point_mass: bool = False

    @property
    def max_distance(self) -> float:
        return max(self.distances)

    @property
    def covariance_z(self) -> float:
        err = np.where(self.covariance_stderr > 0, self.covariance_stderr, np.inf)
        z = np.abs(self.covariance - self.expected) / err
        return float(np.nan_to_num(z, nan=0.0).max())

    def passed(self, distance: float = 0.05, z: float = 3.0) -> bool:
        return self.max_distance <= distance and self.covariance_z <= z


def simulate_renewal(stats_: RenewalStats, n: int, reps: int, seed: int = 0, chunk: int = 200) -> np.ndarray:
    """(X − n·v)/√n at the first renewal with total length ≥ n, one row per repetition."""
    mean_pieces = n / stats_.mean_t
    width = int(1.2 * mean_pieces + 10 * math.sqrt(mean_pieces) + 10)
    out = np.empty((reps, stats_.d))
    for c, start in enumerate(range(0, reps, chunk)):
        rng = stream(seed, "renewal.clt", c)
        rows = min(chunk, reps - start)
        draws = rng.choice(len(stats_.probs), size=(rows, width), p=stats_.probs).astype(np.int32)
        totals = np.cumsum(stats_.ts[draws], axis=1)
        while np.any(totals[:, -1] < n):
            extra = rng.choice(len(stats_.probs), size=(rows, width), p=stats_.probs).astype(np.int32)
            draws = np.hstack([draws, extra])
            totals = np.cumsum(stats_.ts[draws], axis=1)
        stop = np.argmax(totals >= n, axis=1)
        mask = np.arange(draws.shape[1])[None, :] <= stop[:, None]
        xs = np.einsum("rk,rkd->rd", mask.astype(float), stats_.xs[draws])
        out[start:start + rows] = (xs - n * stats_.velocity) / math.sqrt(n)
    return out


def clt_check(stats_: RenewalStats, n: int = 10_000, reps: int = 2000, seed: int = 0) -> CLTReport:
    """
    Compare the renewal-synthesised (X − nv)/√n with N(0, Σ̂).

    Each coordinate is standardised by Σ̂ and tested with a Kolmogorov
    distance; the empirical covariance is compared entrywise with Σ̂.
    A coordinate with zero variance must be an exact point mass at 0.
    """
    z = simulate_renewal(stats_, n, reps, seed)
    sigma = stats_.covariance
    distances = []
    point_mass = False
    for k in range(stats_.d):
        if sigma[k, k] <= 1e-14:
            point_mass = True
            distances.append(float(np.abs(z[:, k]).max()))
        else:
            distances.append(float(stats.kstest(z[:, k] / math.sqrt(sigma[k, k]), "norm").statistic))
    products = z[:, :, None] * z[:, None, :]
    emp = products.mean(axis=0)
    err = products.std(axis=0, ddof=1) / math.sqrt(reps)
    return CLTReport(n, reps, distances, emp, err, sigma, point_mass)


@dataclass
class VelocityRow:
    norm: float
    value: float
    stderr: float
    spread: float
    exact: bool


@dataclass
class VelocityTrend:
    target: float
    rows: List[VelocityRow]

    def distances(self) -> List[float]:
        return [abs(r.value - self.target) for r in self.rows]

    def monotone(self, slack: float = 0.0) -> bool:
        """Distances to 1/|v| decrease along the sequence, up to slack plus the error bars."""
        dist = self.distances()
        return all(b <= a + slack + r.stderr + q.stderr
                   for a, b, r, q in zip(dist, dist[1:], self.rows, self.rows[1:]))


def crossing_velocity(xs: Sequence[Sequence[int]], cfg: EnsembleConfig, cone: ConeSpec, sampler_cfg=None,
                      stats_: Optional[RenewalStats] = None, exact_max: int = 2, exact_length: int = 8,
                      near_boundary: float = 0.05) -> VelocityTrend:
    """
    𝔸_x(T)/|x| along a sequence of endpoints, with Var(T)/|x|.

    Endpoints with ‖x‖₁ ≤ exact_max use the exact oracle truncated at
    exact_length; the rest use sample_crossing.

    Raises:
        ValueError: If the cone drift is not within near_boundary of ∂K
    """
    dual = cone.metric.dual_norm(cone.h)
    if abs(dual - 1.0) > near_boundary:
        raise ValueError(f"Crossing velocity needs a drift near the boundary of K (dual norm {dual:.3g})")
    sampler_cfg = sampler_cfg or SamplerConfig()
    target = 1.0 / float(np.linalg.norm(stats_.velocity)) if stats_ is not None else math.nan
    rows = []
    for x in xs:
        x = tuple(int(c) for c in x)
        norm = float(np.linalg.norm(x))
        if l1_norm(x) <= exact_max:
            m1, m2 = crossing_length_moments(x, exact_length, cfg)
            rows.append(VelocityRow(norm, m1 / norm, 0.0, (m2 - m1 * m1) / norm, True))
            continue
        batch = sample_crossing(x, cfg, sampler_cfg)
        m1 = estimate_observable(batch, lambda p: p.length)
        m2 = estimate_observable(batch, lambda p: p.length ** 2)
        rows.append(VelocityRow(norm, m1.value / norm, m1.stderr / norm, (m2.value - m1.value ** 2) / norm, False))
    return VelocityTrend(target, rows)


def moment_generating(stats_: RenewalStats, f: Sequence[float]) -> float:
    """Ê_h e^{f·X} over the normalised piece distribution."""
    return float(stats_.probs @ np.exp(stats_.xs @ np.asarray(f, dtype=float)))


@dataclass
class BoundaryCurveReport:
    offsets: List[float]
    renewal: List[float]
    geometry: List[float]
    shrunk: bool = False

    def max_gap(self) -> float:
        return max((abs(a - b) for a, b in zip(self.renewal, self.geometry)), default=0.0)


def _root(fn, lo: float, hi: float) -> Optional[float]:
    if fn(lo) * fn(hi) > 0:
        return None
    return float(optimize.brentq(fn, lo, hi, xtol=1e-12))


def boundary_curve_check(stats_: RenewalStats, shape: CriticalShape, h: Sequence[float],
                         radius: float = 0.05, points: int = 5) -> BoundaryCurveReport:
    """
    Locus {f: Ê_h e^{f·X} = 1} near f = 0 against the sampled ∂K near h.

    Offsets t run along a unit vector orthogonal to E_h X; for each t the
    normal coordinate s solving the equation is compared with the s that puts
    h + tτ + s·n̂ on ∂K. Offsets whose equation has no root within the
    bracket shrink the grid.
    """
    h = np.asarray(h, dtype=float)
    normal = stats_.mean_x / np.linalg.norm(stats_.mean_x)
    tangent = linalg.null_space(normal[None, :])[:, 0]
    grid = np.linspace(-radius, radius, points)
    report = BoundaryCurveReport([], [], [])
    bracket = 4 * radius + 0.5
    for t in grid:
        base = t * tangent

        def renewal_eq(s):
            return moment_generating(stats_, base + s * normal) - 1.0

        def geometry_eq(s):
            return shape.metric.dual_norm(h + base + s * normal) - 1.0

        s_r = 0.0 if t == 0 else _root(renewal_eq, -bracket, 0.0)
        s_g = _root(geometry_eq, -bracket, bracket)
        if s_r is None or s_g is None:
            report.shrunk = True
            continue
        report.offsets.append(float(t))
        report.renewal.append(s_r)
        report.geometry.append(s_g)
    if report.shrunk:
        logger.warning("boundary curve grid shrunk to %d of %d offsets", len(report.offsets), points)
    return report


@dataclass
class SupercriticalVelocity:
    mu: float
    velocity: np.ndarray


def supercritical_velocity(stats_: RenewalStats, g: Sequence[float], h: Sequence[float]) -> SupercriticalVelocity:
    """
    Velocity at a drift g outside K by tilting the critical piece distribution.

    μ solves Ê_h e^{(g−h)·X − μT} = 1 and v(g) is the tilted E X / E T.

    Raises:
        ValueError: If no μ ≥ 0 solves the equation (g inside K)
    """
    f = np.asarray(g, dtype=float) - np.asarray(h, dtype=float)
    lin = stats_.xs @ f

    def eq(mu):
        return float(stats_.probs @ np.exp(lin - mu * stats_.ts)) - 1.0

    if eq(0.0) < 0:
        raise ValueError(f"Drift {tuple(g)} is not supercritical for this piece distribution")
    hi = 1.0
    while eq(hi) > 0:
        hi *= 2
        if hi > 1e6:
            raise ValueError("Tilt equation has no root")
    mu = float(optimize.brentq(eq, 0.0, hi, xtol=1e-12))
    tilt = stats_.probs * np.exp(lin - mu * stats_.ts)
    return SupercriticalVelocity(mu, (tilt @ stats_.xs) / float(tilt @ stats_.ts))


# ---------------------------------------------------------------------------
# Piece libraries
# ---------------------------------------------------------------------------

def write_piece_library(pieces: Sequence[Piece], output_dir, stem: str = "pieces") -> List[FilePath]:
    """Pieces as Path text plus a CSV manifest (x_1..x_d, T, log_weight)."""
    out = FilePath(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths_file = write_paths(out / f"{stem}.paths", [p.path for p in pieces], header="irreducible pieces")
    manifest = out / f"{stem}.csv"
    d = pieces[0].path.d if pieces else 0
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x_{i + 1}" for i in range(d)] + ["T", "log_weight"])
        for p in pieces:
            writer.writerow(list(p.X) + [p.T, repr(p.log_weight)])
    return [paths_file, manifest]


def read_piece_library(output_dir, stem: str = "pieces") -> List[Piece]:
    out = FilePath(output_dir)
    paths = read_paths(out / f"{stem}.paths")
    with open(out / f"{stem}.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    if len(rows) != len(paths):
        raise ValueError(f"{stem}: {len(paths)} paths but {len(rows)} manifest rows")
    return [Piece(p, p.displacement, p.length, float(r["log_weight"])) for p, r in zip(paths, rows)]
