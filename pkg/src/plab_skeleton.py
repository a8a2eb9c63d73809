"""
polymerlab - Coarse graining

Decorated skeletons of a path at scale K: the trunk with its γ/η
decomposition, pre-hairs built on the reversed η pieces, dirty boxes where
the η ranges are fat, and the hairs that stay clear of the dirty region.

Balls are open in the ξ metric: y ∈ U_K(u) iff ξ(y − u) < K, so a vertex at
distance exactly K is outside.
"""

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path as FilePath
from typing import List, Sequence, Tuple

import numpy as np

from plab_core import Path, Point, PotentialSpec, potential_energy
from plab_geometry import (
    DEFAULT_KAPPA,
    DEFAULT_NU,
    DEFAULT_NU_TILDE,
    ConeSpec,
    XiMetric,
    require_in_k,
    surcharge,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SkeletonConstants:
    """Dirty threshold c1, hair and dirty surcharge weights c2/c4, cone apertures and κ."""

    c1: float = 4.0
    c2: float = 1.0
    c4: float = 1.0
    nu: float = DEFAULT_NU
    nu_tilde: float = DEFAULT_NU_TILDE
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        if self.c1 <= 0:
            raise ValueError(f"c1 must be positive, got {self.c1}")
        if self.c2 < 0 or self.c4 < 0:
            raise ValueError(f"c2 and c4 must be non-negative, got {self.c2}, {self.c4}")
        if not 0 < self.nu < self.nu_tilde <= 1:
            raise ValueError(f"Need 0 < nu < nu_tilde <= 1, got {self.nu}, {self.nu_tilde}")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")


def _point(row) -> Point:
    return tuple(int(c) for c in row)


def _check_scale(K: int, metric: XiMetric):
    floor = 3 * metric.step_overshoot()
    if K < floor:
        raise ValueError(f"Scale K={K} is below the minimum {floor:.3g} (three lattice steps in ξ)")


# ---------------------------------------------------------------------------
# Trunk and pre-hairs
# ---------------------------------------------------------------------------

@dataclass
class Trunk:
    """
    Trunk vertices u_0..u_m with the indices σ_ℓ, τ_ℓ.

    γ_ℓ = γ[τ_ℓ, σ_ℓ] and η_ℓ = γ[σ_ℓ, τ_{ℓ+1}]; σ_m = n. A closed trunk
    ends at the endpoint γ(n) because the path left U_K(u_{m−1}) and came
    back to finish inside it; u_m then lies within K of u_{m−1}.
    """

    vertices: List[Point]
    sigma: List[int]
    tau: List[int]
    closed: bool = False

    @property
    def m(self) -> int:
        return len(self.vertices) - 1

    def pieces(self, path: Path) -> Tuple[List[Path], List[Path]]:
        gammas = [path.sub(t, s) for t, s in zip(self.tau, self.sigma)]
        etas = [path.sub(self.sigma[l], self.tau[l + 1]) for l in range(self.m)]
        return gammas, etas


def build_trunk(path: Path, K: int, metric: XiMetric) -> Trunk:
    """
    Trunk of a path at scale K.

    The construction stops with σ_ℓ = n when the rest of the path stays in
    U_K(u_ℓ). Otherwise σ_ℓ is the first exit from U_K(u_ℓ) after τ_ℓ and
    τ_{ℓ+1} is one past the last visit to U_K(u_ℓ). A path that leaves the
    ball and ends inside it has no such index; τ_{ℓ+1} = n then and the trunk
    is closed at the endpoint.

    Raises:
        ValueError: If K is below three lattice steps in ξ
    """
    _check_scale(K, metric)
    verts = path.vertex_array
    n = path.length
    trunk = Trunk([path.start], [], [0])
    while True:
        t = trunk.tau[-1]
        inside = metric.many(verts[t:] - verts[t]) < K
        last = t + int(np.nonzero(inside)[0][-1])
        if inside.all():
            trunk.sigma.append(n)
            return trunk
        trunk.sigma.append(t + int(np.argmin(inside)))
        trunk.closed = last == n
        trunk.tau.append(min(last + 1, n))
        trunk.vertices.append(_point(verts[trunk.tau[-1]]))


def polygonal_approximation(vertices: Sequence[Sequence[int]], K: int, metric: XiMetric) -> List[Point]:
    """Successive first exits z_1, z_2, ... from the balls U_K(z_r), z_0 = first vertex."""
    verts = np.asarray(vertices, dtype=np.int64)
    out: List[Point] = []
    at = 0
    while True:
        inside = metric.many(verts[at:] - verts[at]) < K
        if inside.all():
            return out
        at += int(np.argmin(inside))
        out.append(_point(verts[at]))


def build_prehairs(etas: Sequence[Path], K: int, metric: XiMetric) -> List[List[Point]]:
    """Pre-hair of each η_ℓ, read backwards from u_{ℓ+1} to v_ℓ."""
    return [polygonal_approximation(eta.vertex_array[::-1], K, metric) for eta in etas]


# ---------------------------------------------------------------------------
# Dirty boxes and hairs
# ---------------------------------------------------------------------------

def box_index(z: Sequence[int], K: int) -> Point:
    """Anchor p ∈ KZ^d of the half-open box p + [0, K)^d containing z."""
    return tuple(K * (int(c) // K) for c in z)


def box_sites(boxes: Sequence[Sequence[int]], K: int, d: int) -> np.ndarray:
    """All lattice sites of the given boxes, stacked."""
    if not boxes:
        return np.zeros((0, d), dtype=np.int64)
    cube = np.array(list(product(range(K), repeat=d)), dtype=np.int64)
    return np.concatenate([np.asarray(p, dtype=np.int64) + cube for p in boxes])


def mark_dirty_boxes(etas: Sequence[Path], K: int, c1: float) -> List[Point]:
    """Boxes B_K(p) holding at least c1·K sites of the joint η range."""
    if c1 <= 0:
        raise ValueError(f"c1 must be positive, got {c1}")
    sites = set()
    for eta in etas:
        sites.update(eta.vertices)
    counts = Counter(box_index(z, K) for z in sites)
    return sorted(p for p, c in counts.items() if c >= c1 * K)


def build_hairs(prehairs: Sequence[Sequence[Point]], dirty: Sequence[Point], K: int,
                metric: XiMetric) -> List[List[Point]]:
    """Pre-hair vertices z whose ball U_{2K}(z) misses every dirty site."""
    sites = box_sites(dirty, K, metric.d)
    if not len(sites):
        return [list(leg) for leg in prehairs]
    return [
        [z for z in leg if metric.many(sites - np.asarray(z)).min() >= 2 * K]
        for leg in prehairs
    ]


# ---------------------------------------------------------------------------
# Decorated skeleton
# ---------------------------------------------------------------------------

@dataclass
class DecoratedSkeleton:
    K: int
    start: Point
    length: int
    trunk: List[Point]
    sigma: List[int]
    tau: List[int]
    prehairs: List[List[Point]] = field(default_factory=list)
    dirty: List[Point] = field(default_factory=list)
    hairs: List[List[Point]] = field(default_factory=list)
    closed: bool = False

    @property
    def d(self) -> int:
        return len(self.start)

    @property
    def hair_count(self) -> int:
        return sum(len(leg) for leg in self.hairs)

    @property
    def trunk_obj(self) -> Trunk:
        return Trunk(self.trunk, self.sigma, self.tau, self.closed)

    @property
    def open_trunk(self) -> List[Point]:
        """Trunk vertices without the closing endpoint of a closed trunk."""
        return self.trunk[:-1] if self.closed else self.trunk

    def pieces(self, path: Path) -> Tuple[List[Path], List[Path]]:
        if path.start != self.start or path.length != self.length:
            raise ValueError("Path does not match this skeleton")
        return self.trunk_obj.pieces(path)

    def skeleton_points(self, include_dirty: bool = True) -> np.ndarray:
        pts = [np.asarray(self.trunk, dtype=np.int64)]
        hairs = [z for leg in self.hairs for z in leg]
        if hairs:
            pts.append(np.asarray(hairs, dtype=np.int64))
        if include_dirty and self.dirty:
            pts.append(box_sites(self.dirty, self.K, self.d))
        return np.concatenate(pts)

    def to_json(self) -> dict:
        data = asdict(self)
        data["start"] = list(self.start)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "DecoratedSkeleton":
        def points(rows):
            return [tuple(r) for r in rows]

        return cls(
            K=int(data["K"]),
            start=tuple(data["start"]),
            length=int(data["length"]),
            trunk=points(data["trunk"]),
            sigma=list(data["sigma"]),
            tau=list(data["tau"]),
            prehairs=[points(leg) for leg in data["prehairs"]],
            dirty=points(data["dirty"]),
            hairs=[points(leg) for leg in data["hairs"]],
            closed=bool(data.get("closed", False)),
        )

    def save(self, filename) -> FilePath:
        target = FilePath(filename)
        with open(target, "w") as f:
            json.dump(self.to_json(), f, indent=2)
        return target


def decorate(path: Path, K: int, metric: XiMetric, constants: SkeletonConstants = SkeletonConstants()) -> DecoratedSkeleton:
    """Trunk, pre-hairs, dirty boxes and hairs of one path."""
    trunk = build_trunk(path, K, metric)
    _, etas = trunk.pieces(path)
    prehairs = build_prehairs(etas, K, metric)
    dirty = mark_dirty_boxes(etas, K, constants.c1)
    hairs = build_hairs(prehairs, dirty, K, metric)
    return DecoratedSkeleton(K, path.start, path.length, trunk.vertices, trunk.sigma, trunk.tau,
                             prehairs, dirty, hairs, closed=trunk.closed)


def reassemble(gammas: Sequence[Path], etas: Sequence[Path]) -> Path:
    """γ_0 ∪ η_0 ∪ γ_1 ∪ ... ∪ γ_m."""
    out = gammas[0]
    for eta, gamma in zip(etas, gammas[1:]):
        out = out.concat(eta).concat(gamma)
    return out


# ---------------------------------------------------------------------------
# Checks and measurements
# ---------------------------------------------------------------------------

@dataclass
class SkeletonChecks:
    reconstruction: bool
    disjoint: bool
    min_separation: float
    hop_range: Tuple[float, float]
    hop_ok: bool
    d1_constant: float
    psi: float

    @property
    def ok(self) -> bool:
        return self.reconstruction and self.disjoint and self.hop_ok and self.min_separation >= 0


def covering_radius(path: Path, skeleton: DecoratedSkeleton, metric: XiMetric) -> float:
    """ψ: every vertex lies within ξ-distance ψK of the trunk, a hair or a dirty site."""
    anchors = skeleton.skeleton_points()
    verts = path.vertex_array
    worst = 0.0
    for v in verts:
        worst = max(worst, float(metric.many(anchors - v).min()))
    return worst / skeleton.K


def check_skeleton(path: Path, skeleton: DecoratedSkeleton, metric: XiMetric) -> SkeletonChecks:
    """
    Measure the structural properties of a skeleton.

    The path after τ_{ℓ+1} must avoid U_K(u_ℓ); trunk hops must have ξ length
    in [K, K + c] with c the largest ξ of one lattice step; min_separation is
    min_{j>ℓ} ξ(u_j − u_ℓ) − K. The closing vertex of a closed trunk is left
    out of all three.
    """
    K = skeleton.K
    gammas, etas = skeleton.pieces(path)
    rebuilt = reassemble(gammas, etas) == path
    verts = path.vertex_array
    trunk = np.asarray(skeleton.open_trunk, dtype=np.int64)

    disjoint = True
    for l, t_next in enumerate(skeleton.tau[1:len(trunk)]):
        if np.any(metric.many(verts[t_next:] - trunk[l]) < K):
            disjoint = False
            logger.debug("trunk ball %d is revisited after tau=%d", l, t_next)

    hops = metric.many(np.diff(trunk, axis=0)) if len(trunk) > 1 else np.zeros(0)
    overshoot = metric.step_overshoot()
    hop_range = (float(hops.min()), float(hops.max())) if hops.size else (float(K), float(K))
    hop_ok = bool(np.all(hops >= K - 1e-9) and np.all(hops <= K + overshoot + 1e-9))

    min_sep = math.inf
    d1_const = 1.0
    for l in range(len(trunk)):
        for j in range(l + 1, len(trunk)):
            min_sep = min(min_sep, metric(trunk[j] - trunk[l]) - K)
            d1 = int(np.abs(trunk[j] - trunk[l]).sum())
            d1_const = max(d1_const, K / d1 if d1 else math.inf)
    if len(trunk) > 1:
        d1_const = max(d1_const, float(np.abs(np.diff(trunk, axis=0)).sum(axis=1).max()) / K)
    if min_sep == math.inf:
        min_sep = 0.0

    return SkeletonChecks(rebuilt, disjoint, min_sep, hop_range, hop_ok, d1_const,
                          covering_radius(path, skeleton, metric))


def energy_split_gap(path: Path, skeleton: DecoratedSkeleton, phi: PotentialSpec, metric: XiMetric,
                     c1: float) -> float:
    """
    Φ(γ) − [c1·φ(1)·K·|𝔡| + Σ_ℓ Φ(γ_ℓ ∩ U_K(u_ℓ))] over the trunk balls that miss the dirty region.

    The γ_ℓ restricted to their own balls are disjoint, so the gap is
    non-negative for any non-decreasing φ ≥ 0.
    """
    K = skeleton.K
    verts = path.vertex_array
    dirty_sites = box_sites(skeleton.dirty, K, path.d)
    total = c1 * phi.phi(1) * K * len(skeleton.dirty)
    for u, t, s in zip(skeleton.open_trunk, skeleton.tau, skeleton.sigma):
        center = np.asarray(u, dtype=np.int64)
        if len(dirty_sites) and metric.many(dirty_sites - center).min() < K:
            continue
        piece = verts[t:s + 1]
        inside = piece[metric.many(piece - center) < K]
        counts = Counter(_point(v) for v in inside)
        total += math.fsum(phi.phi(c) for c in counts.values())
    return potential_energy(path, phi) - total


# ---------------------------------------------------------------------------
# Surcharge and census
# ---------------------------------------------------------------------------

@dataclass
class SkeletonSurcharge:
    trunk_lo: float
    trunk_hi: float
    hair_term: float
    dirty_term: float

    @property
    def total_lo(self) -> float:
        return self.trunk_lo + self.hair_term + self.dirty_term

    @property
    def total_hi(self) -> float:
        return self.trunk_hi + self.hair_term + self.dirty_term

    @property
    def total(self) -> float:
        return 0.5 * (self.total_lo + self.total_hi)


def skeleton_surcharge(skeleton: DecoratedSkeleton, h: Sequence[float], metric: XiMetric,
                       constants: SkeletonConstants = SkeletonConstants()) -> SkeletonSurcharge:
    """
    𝔰_h(𝔱_K) + K(c2·Σ|𝔥^ℓ| + c4·|𝔡|), trunk term as a bracket.

    Raises:
        DriftOutsideK: If h is not in K
    """
    require_in_k(h, metric)
    lo = hi = 0.0
    for a, b in zip(skeleton.trunk[:-1], skeleton.trunk[1:]):
        s_lo, s_hi = surcharge(np.subtract(b, a), h, metric)
        lo += s_lo
        hi += s_hi
    K = skeleton.K
    return SkeletonSurcharge(lo, hi, K * constants.c2 * skeleton.hair_count, K * constants.c4 * len(skeleton.dirty))


def skeleton_cone_points(skeleton: DecoratedSkeleton, cone: ConeSpec) -> List[int]:
    """Trunk indices u with the whole skeleton inside (u − Y_h) ∪ (u + Y_h)."""
    pts = skeleton.skeleton_points()
    out = []
    for idx, u in enumerate(skeleton.trunk):
        rel = pts - np.asarray(u, dtype=np.int64)
        inside = cone.conservative_many(rel, tilde=False) | cone.conservative_many(-rel, tilde=False)
        if inside.all():
            out.append(idx)
    return out


def slab_count(skeleton: DecoratedSkeleton, cone: ConeSpec) -> int:
    """|B*_h|: slabs (j−1)K ≤ h·x < jK met by non-cone trunk points, hairs or dirty sites."""
    K = skeleton.K
    cone_idx = set(skeleton_cone_points(skeleton, cone))
    pts = [u for i, u in enumerate(skeleton.trunk) if i not in cone_idx]
    pts += [z for leg in skeleton.hairs for z in leg]
    arrays = [np.asarray(pts, dtype=float).reshape(-1, skeleton.d), box_sites(skeleton.dirty, K, skeleton.d)]
    stacked = np.concatenate(arrays)
    if not len(stacked):
        return 0
    return len(set(np.floor(stacked @ cone.h / K).astype(int).tolist()))


@dataclass
class CensusRow:
    trunk_size: int
    hair_total: int
    dirty_count: int
    surcharge_lo: float
    surcharge_hi: float
    slab_count: int
    displacement: float
    weight: float

    @property
    def surcharge(self) -> float:
        return 0.5 * (self.surcharge_lo + self.surcharge_hi)


@dataclass
class SkeletonCensus:
    """Weighted skeleton statistics of a batch; weights sum to one."""

    K: int
    h: Tuple[float, ...]
    rows: List[CensusRow]

    def fraction_exceeding(self, delta: float) -> float:
        """Weight on skeletons with 𝔰_h(γ̂_K) > 2δ|x|."""
        return math.fsum(r.weight for r in self.rows if r.surcharge > 2 * delta * r.displacement)

    def median_surcharge_per_length(self) -> float:
        values = np.array([r.surcharge / max(r.displacement, 1.0) for r in self.rows])
        weights = np.array([r.weight for r in self.rows])
        order = np.argsort(values, kind="stable")
        cumulative = np.cumsum(weights[order])
        return float(values[order][np.searchsorted(cumulative, 0.5 * cumulative[-1])])

    def histogram(self, column: str) -> List[Tuple[int, float]]:
        """Weight per integer value of trunk_size, hair_total, dirty_count or slab_count."""
        acc: Counter = Counter()
        for r in self.rows:
            acc[getattr(r, column)] += r.weight
        return sorted(acc.items())

    def write_csv(self, filename) -> FilePath:
        target = FilePath(filename)
        names = list(CensusRow.__dataclass_fields__)
        with open(target, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(names)
            for r in self.rows:
                writer.writerow([repr(getattr(r, k)) for k in names])
        return target


def skeleton_census(batch, K: int, h: Sequence[float], metric: XiMetric,
                    constants: SkeletonConstants = SkeletonConstants()) -> SkeletonCensus:
    """
    Weighted census of (|𝔱_K|, Σ|𝔥^ℓ|, |𝔡|, surcharge, |B*_h|) over a batch.

    Args:
        batch: Anything with .paths and .log_weights (a SampleBatch)
        K: Scale
        h: Drift in K
        metric: ξ metric
        constants: Coarse-graining constants

    Returns:
        SkeletonCensus with self-normalised weights
    """
    h = tuple(float(c) for c in h)
    log_w = np.asarray(batch.log_weights, dtype=float)
    weights = np.exp(log_w - log_w.max())
    weights /= weights.sum()
    cone = ConeSpec(h, metric, constants.nu, constants.nu_tilde) if any(h) else None
    rows = []
    for path, w in zip(batch.paths, weights):
        skel = decorate(path, K, metric, constants)
        s = skeleton_surcharge(skel, h, metric, constants)
        rows.append(CensusRow(
            trunk_size=len(skel.trunk),
            hair_total=skel.hair_count,
            dirty_count=len(skel.dirty),
            surcharge_lo=s.total_lo,
            surcharge_hi=s.total_hi,
            slab_count=slab_count(skel, cone) if cone else 0,
            displacement=float(np.linalg.norm(path.displacement)),
            weight=float(w),
        ))
    logger.info("skeleton census of %d paths at K=%d", len(rows), K)
    return SkeletonCensus(K, h, rows)
