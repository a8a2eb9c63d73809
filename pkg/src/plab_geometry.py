"""
polymerlab - Geometry

Inverse correlation length ξ, the unit ball U = {ξ ≤ 1}, the critical-drift
set K (polar of U), conjugate drifts, surcharges and the cones Y_h ⊆ Ỹ_h.

U is stored as direction-sampled boundary points; between samples ξ is the
gauge of their convex hull, so K is the polar polytope of that hull and every
query reduces to a max over facet normals.
"""

import csv
import json
import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, reduce
from itertools import product
from math import gcd
from pathlib import Path as FilePath
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull

from plab_core import EnsembleConfig, l1_norm, worker_count
from plab_oracle import two_point_truncated

logger = logging.getLogger(__name__)

DEFAULT_NU = 0.25
DEFAULT_NU_TILDE = 0.6
DEFAULT_KAPPA = 0.4
TOL = 1e-9


class DriftOutsideK(ValueError):
    """Raised when a drift is not in the critical set K (within tolerance)."""

    def __init__(self, message: str, dual_norm: float):
        super().__init__(message)
        self.dual_norm = dual_norm


class BracketInconsistency(RuntimeError):
    """Raised when a ξ lower bracket exceeds its upper bracket."""


# ---------------------------------------------------------------------------
# Polytope gauges
# ---------------------------------------------------------------------------

class _Gauge:
    """Gauge function of the convex hull of points surrounding the origin."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=float)
        self.d = self.points.shape[1]
        if self.d == 1:
            self.normals = np.array([[1.0 / self.points.max()], [1.0 / self.points.min()]])
            self.vertices = np.array([[self.points.max()], [self.points.min()]])
            return
        hull = ConvexHull(self.points)
        offsets = -hull.equations[:, -1]
        if np.any(offsets <= 0):
            raise ValueError("Origin is not interior to the sampled ξ-ball")
        self.normals = hull.equations[:, :-1] / offsets[:, None]
        self.vertices = self.points[hull.vertices]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(x) @ self.normals.T
        return np.maximum(values.max(axis=1), 0.0)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

class XiMetric(ABC):
    """A norm with brackets; the midpoint drives balls and cones."""

    d: int

    @abstractmethod
    def bracket_many(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper brackets of ξ at each row of points."""

    @abstractmethod
    def many(self, points) -> np.ndarray:
        """Midpoint ξ at each row of points."""

    @abstractmethod
    def dual_norm(self, h: Sequence[float]) -> float:
        """max_{ξ(x) ≤ 1} h·x; h ∈ K iff this is at most 1."""

    @abstractmethod
    def boundary_samples(self) -> np.ndarray:
        """Points of ∂U for the midpoint norm."""

    def __call__(self, x) -> float:
        return float(self.many(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def bracket(self, x) -> Tuple[float, float]:
        lo, hi = self.bracket_many(np.atleast_2d(np.asarray(x, dtype=float)))
        return float(lo[0]), float(hi[0])

    def width(self, x) -> float:
        lo, hi = self.bracket(x)
        return hi - lo

    def step_overshoot(self) -> float:
        """Largest ξ of a single lattice step."""
        eye = np.vstack([np.eye(self.d), -np.eye(self.d)])
        return float(self.many(eye).max())

    def describe(self) -> dict:
        return {"kind": type(self).__name__, "d": self.d}


class ScaledL1Metric(XiMetric):
    """ξ(x) = scale·‖x‖₁, exact (zero-width brackets). Surrogate for tests."""

    def __init__(self, d: int = 2, scale: float = 1.0):
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        self.d = d
        self.scale = float(scale)

    def many(self, points) -> np.ndarray:
        return self.scale * np.abs(np.atleast_2d(np.asarray(points, dtype=float))).sum(axis=1)

    def bracket_many(self, points):
        values = self.many(points)
        return values, values.copy()

    def dual_norm(self, h) -> float:
        return float(np.max(np.abs(h))) / self.scale

    def boundary_samples(self) -> np.ndarray:
        units = unit_grid(self.d)
        return units / self.many(units)[:, None]

    def describe(self) -> dict:
        return {"kind": "l1", "d": self.d, "scale": self.scale}


def direction_grid(d: int, max_l1: Optional[int] = None) -> List[Tuple[int, ...]]:
    """
    Primitive lattice vectors with ‖v‖₁ ≤ max_l1, sorted by angle in d=2.

    max_l1 defaults to 3 in d=2 (16 directions) and 2 otherwise.
    """
    if max_l1 is None:
        max_l1 = 3 if d == 2 else 2
    vectors = []
    for v in product(range(-max_l1, max_l1 + 1), repeat=d):
        if 0 < l1_norm(v) <= max_l1 and reduce(gcd, (abs(c) for c in v)) == 1:
            vectors.append(tuple(v))
    if d == 2:
        vectors.sort(key=lambda v: math.atan2(v[1], v[0]) % (2 * math.pi))
    return vectors


def unit_grid(d: int, count: int = 64) -> np.ndarray:
    """Unit vectors: uniform angles in d=2, normalised small lattice vectors otherwise."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        angles = 2 * math.pi * np.arange(count) / count
        return np.column_stack([np.cos(angles), np.sin(angles)])
    vecs = np.array([v for v in product(range(-2, 3), repeat=d) if any(v)], dtype=float)
    return vecs / np.linalg.norm(vecs, axis=1)[:, None]


# ---------------------------------------------------------------------------
# ξ estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class XiCaps:
    """Truncation caps for ξ estimation: targets n·v with ‖n·v‖₁ ≤ max_norm, lengths ≤ ‖n·v‖₁ + slack."""

    max_norm: int = 6
    slack: int = 4
    max_length: int = 16

    def __post_init__(self):
        if self.max_norm < 2 or self.slack < 0:
            raise ValueError(f"Invalid caps max_norm={self.max_norm}, slack={self.slack}")
        if self.max_norm + self.slack > self.max_length:
            raise ValueError(
                f"max_norm + slack = {self.max_norm + self.slack} exceeds max_length {self.max_length}"
            )


def _xi_direction(args) -> dict:
    """Brackets for ξ(v) at one lattice vector v (not normalised)."""
    v, cfg, caps = args
    norm = l1_norm(v)
    multiples = caps.max_norm // norm
    if multiples < 2:
        raise ValueError(f"Direction {v} needs max_norm >= {2 * norm}")
    logs, tails, bounds = [], [], []
    for n in range(1, multiples + 1):
        target = tuple(n * c for c in v)
        two_point = two_point_truncated(target, l1_norm(target) + caps.slack, cfg,
                                        half_open=True, max_length=caps.max_length)
        logs.append(two_point.log_value)
        tails.append(two_point.tail_estimate)
        bounds.append(two_point.tail_bound)

    upper = min(-logs[k] / (k + 1) for k in range(multiples))
    increments = [logs[k - 1] - logs[k] for k in range(1, multiples)]
    last = increments[-1]
    tail = tails[-1] if math.isfinite(tails[-1]) else 0.0
    with_tail = logs[-2] - float(np.logaddexp(logs[-1], math.log(tail))) if tail > 0 else last
    spread = abs(increments[-1] - increments[-2]) if len(increments) > 1 else 0.0
    lower = max(min(with_tail, upper, last) - spread, 0.0)
    return {
        "vector": v,
        "lower": lower,
        "upper": upper,
        "point": min(max(last, lower), upper),
        "log_two_point": logs,
        "tail_estimates": tails,
        "tail_bounds": bounds,
        "tail_resolved": all(math.isfinite(t) for t in tails),
    }


class XiEstimate(XiMetric):
    """
    Direction-sampled ξ brackets.

    lower/upper are per unit Euclidean length along units[i]; vectors[i] is
    the lattice vector that was enumerated.
    """

    def __init__(self, vectors, lower, upper, metadata: Optional[dict] = None):
        self.vectors = np.asarray(vectors, dtype=float)
        self.d = self.vectors.shape[1]
        norms = np.linalg.norm(self.vectors, axis=1)
        self.units = self.vectors / norms[:, None]
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.metadata = metadata or {}
        if np.any(self.lower > self.upper + TOL):
            bad = int(np.argmax(self.lower - self.upper))
            raise BracketInconsistency(
                f"ξ lower {self.lower[bad]:.6g} exceeds upper {self.upper[bad]:.6g} along {tuple(self.vectors[bad])}"
            )
        if np.any(self.lower <= 0):
            logger.warning("ξ lower bracket is zero along some directions; brackets are wide")

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @cached_property
    def _gauges(self) -> Tuple[_Gauge, _Gauge, _Gauge]:
        # lower values give the farthest boundary points and the smallest gauge
        floor = np.maximum(self.lower, 1e-12)
        return (
            _Gauge(self.units / floor[:, None]),
            _Gauge(self.units / self.mid[:, None]),
            _Gauge(self.units / self.upper[:, None]),
        )

    def many(self, points) -> np.ndarray:
        return self._gauges[1](np.asarray(points, dtype=float))

    def bracket_many(self, points):
        pts = np.asarray(points, dtype=float)
        return self._gauges[0](pts), self._gauges[2](pts)

    def dual_norm(self, h) -> float:
        return float((self._gauges[1].vertices @ np.asarray(h, dtype=float)).max())

    def boundary_samples(self) -> np.ndarray:
        return self.units / self.mid[:, None]

    def describe(self) -> dict:
        return {"kind": "xi-estimate", "d": self.d, "directions": len(self.vectors)}

    def save_csv(self, filename) -> FilePath:
        """Columns g_1..g_d (unit direction), v_1..v_d (lattice vector), xi_lower, xi_upper."""
        target = FilePath(filename)
        with open(target, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                [f"g_{i + 1}" for i in range(self.d)]
                + [f"v_{i + 1}" for i in range(self.d)]
                + ["xi_lower", "xi_upper"]
            )
            for u, v, lo, hi in zip(self.units, self.vectors, self.lower, self.upper):
                writer.writerow([repr(float(c)) for c in u] + [int(c) for c in v] + [repr(float(lo)), repr(float(hi))])
        return target

    @classmethod
    def load_csv(cls, filename) -> "XiEstimate":
        source = FilePath(filename)
        if not source.exists():
            raise FileNotFoundError(f"Shape file missing: {source}")
        with open(source, newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise ValueError(f"{source.name}: no directions")
        d = sum(1 for key in rows[0] if key.startswith("v_"))
        vectors = [[int(r[f"v_{i + 1}"]) for i in range(d)] for r in rows]
        return cls(vectors, [float(r["xi_lower"]) for r in rows], [float(r["xi_upper"]) for r in rows],
                   {"source": str(source)})


def estimate_xi(
    directions: Optional[Sequence[Sequence[int]]],
    cfg: EnsembleConfig,
    caps: XiCaps = XiCaps(),
    workers: Optional[int] = None,
) -> XiEstimate:
    """
    Bracket ξ along lattice directions from truncated two-point sums.

    The upper bracket min_n −(1/n) log A_{≤L}(n v) is rigorous: the sums drop
    the initial vertex, which makes them super-multiplicative with no
    prefactor. The lower bracket uses the last increment
    −log(A(Nv) + tail)/A((N−1)v), widened by its change over the previous step.

    Args:
        directions: Lattice vectors (default: direction_grid(cfg.d))
        cfg: Ensemble parameters; only the potential matters here
        caps: Truncation caps
        workers: Parallel directions (capped by POLYMERLAB_THREADS)

    Returns:
        XiEstimate with brackets per unit length

    Raises:
        ValueError: If φ(1) = 0 (free walk, ξ ≡ 0)
    """
    if cfg.potential.phi(1) <= 0:
        raise ValueError("ξ estimation needs φ(1) > 0; the free walk has ξ ≡ 0")
    vectors = [tuple(int(c) for c in v) for v in (directions or direction_grid(cfg.d))]
    if any(len(v) != cfg.d or not any(v) for v in vectors):
        raise ValueError("Directions must be non-zero lattice vectors of dimension d")
    neutral = EnsembleConfig(cfg.d, cfg.potential, (0.0,) * cfg.d, 0.0, cfg.kind, cfg.K)
    jobs = [(v, neutral, caps) for v in vectors]
    pool_size = worker_count(workers)
    if pool_size > 1:
        with ProcessPoolExecutor(max_workers=pool_size) as pool:
            results = list(pool.map(_xi_direction, jobs))
    else:
        results = [_xi_direction(job) for job in jobs]
    norms = np.array([np.linalg.norm(v) for v in vectors])
    lower = np.array([r["lower"] for r in results]) / norms
    upper = np.array([r["upper"] for r in results]) / norms
    metadata = {
        "caps": {"max_norm": caps.max_norm, "slack": caps.slack, "max_length": caps.max_length},
        "potential": cfg.potential.describe(),
        "per_direction": results,
    }
    logger.info("estimated ξ along %d directions", len(vectors))
    return XiEstimate(vectors, lower, upper, metadata)


# ---------------------------------------------------------------------------
# Critical shape
# ---------------------------------------------------------------------------

@dataclass
class ConjugateDrift:
    """h ∈ ∂K maximising h·g, with the duality gap ξ_upper(g) − h·g."""

    h: np.ndarray
    gap: float
    face: List[np.ndarray] = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return len(self.face) > 1


def min_shape_directions(d: int) -> int:
    """Fewest boundary directions a shape may use: the default direction grid, 16 in d=2."""
    return len(direction_grid(d))


class CriticalShape:
    """
    Sampled ∂U with K as its polar polytope.

    Raises:
        ValueError: If the metric samples fewer than min_shape_directions(d) directions
    """

    def __init__(self, metric: XiMetric):
        self.metric = metric
        self.d = metric.d
        samples = metric.boundary_samples()
        floor = min_shape_directions(self.d)
        if len(samples) < floor:
            raise ValueError(f"Critical shape needs at least {floor} directions in d={self.d}, got {len(samples)}")
        gauge = _Gauge(samples)
        self.boundary = gauge.vertices
        self.k_vertices = gauge.normals

    def conjugate_drift(self, g: Sequence[float]) -> ConjugateDrift:
        """
        Maximiser of h·g over the polytope K.

        When several K vertices tie, the face is reported and its centroid
        returned.
        """
        g = np.asarray(g, dtype=float)
        if not np.any(g):
            raise ValueError("Direction g must be non-zero")
        scores = self.k_vertices @ g
        best = scores.max()
        face_idx = np.nonzero(scores >= best - 1e-7 * max(1.0, abs(best)))[0]
        face = _unique_rows(self.k_vertices[face_idx])
        h = np.mean(face, axis=0)
        if len(face) > 1:
            logger.debug("conjugate drift for g=%s lies on a face with %d vertices", g, len(face))
        _, hi = self.metric.bracket(g)
        return ConjugateDrift(h, hi - float(h @ g), list(face))

    def conjugate_direction(self, h: Sequence[float]) -> np.ndarray:
        """Unit direction of the ∂U point(s) maximising h·x."""
        scores = self.boundary @ np.asarray(h, dtype=float)
        best = scores.max()
        face = _unique_rows(self.boundary[scores >= best - 1e-7 * max(1.0, abs(best))])
        x = np.mean(face, axis=0)
        return x / np.linalg.norm(x)

    def polarity_violation(self) -> float:
        """max over stored h ∈ K and x ∈ ∂U of h·x − 1."""
        return float((self.k_vertices @ self.boundary.T).max() - 1.0)

    def strict_convexity_margin(self, min_angle_deg: float = 20.0) -> float:
        """
        δ₀ = min over boundary pairs at angle ≥ min_angle of 1 − ξ((x+y)/2).

        Positive δ₀ means no flat piece of ∂U spans that angle.
        """
        pts = self.metric.boundary_samples()
        units = pts / np.linalg.norm(pts, axis=1)[:, None]
        cosines = np.clip(units @ units.T, -1.0, 1.0)
        i, j = np.nonzero(np.triu(cosines <= math.cos(math.radians(min_angle_deg)), k=1))
        if i.size == 0:
            return 1.0
        mids = 0.5 * (pts[i] + pts[j])
        return float((1.0 - self.metric.many(mids)).min())

    def write_csv(self, filename) -> FilePath:
        """Boundary points of U and the conjugate drift of each sampled direction."""
        target = FilePath(filename)
        with open(target, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([f"x_{i + 1}" for i in range(self.d)] + [f"h_{i + 1}" for i in range(self.d)] + ["gap"])
            for x in self.metric.boundary_samples():
                drift = self.conjugate_drift(x)
                writer.writerow([repr(float(c)) for c in x] + [repr(float(c)) for c in drift.h] + [repr(drift.gap)])
        return target


def _unique_rows(rows: np.ndarray) -> np.ndarray:
    rounded = np.round(rows, 9)
    _, idx = np.unique(rounded, axis=0, return_index=True)
    return rows[np.sort(idx)]


def surcharge(x: Sequence[float], h: Sequence[float], metric: XiMetric, tol: float = 1e-6) -> Tuple[float, float]:
    """
    Bracket on 𝔰_h(x) = ξ(x) − h·x.

    Raises:
        DriftOutsideK: If h is outside K beyond tol
    """
    require_in_k(h, metric, tol)
    lo, hi = metric.bracket(x)
    drift = float(np.dot(h, x))
    return lo - drift, hi - drift


def require_in_k(h, metric: XiMetric, tol: float = 1e-6):
    norm = metric.dual_norm(h)
    if norm > 1.0 + tol:
        raise DriftOutsideK(f"Drift {tuple(h)} lies outside K (dual norm {norm:.6g})", norm)


# ---------------------------------------------------------------------------
# Cones
# ---------------------------------------------------------------------------

@dataclass
class Membership:
    """
    Cone membership of one point.

    member uses the ξ midpoint; conservative uses the upper ξ bracket (the
    point is a member for every ξ inside the brackets); indeterminate means
    the two ends of the bracket disagree.
    """

    member: bool
    margin: float
    conservative: bool
    indeterminate: bool

    def __bool__(self) -> bool:
        return self.member


class ConeSpec:
    """
    Y_h = {𝔰_h(x) ≤ ν ξ(x)} = {h·x ≥ (1−ν)ξ(x)} and Ỹ_h = {h·x ≥ (1−ν̃)ξ(x)}.
    """

    def __init__(self, h: Sequence[float], metric: XiMetric, nu: float = DEFAULT_NU,
                 nu_tilde: float = DEFAULT_NU_TILDE):
        self.h = np.asarray(h, dtype=float)
        self.metric = metric
        self.nu = float(nu)
        self.nu_tilde = float(nu_tilde)
        if len(self.h) != metric.d:
            raise ValueError(f"Drift {tuple(self.h)} does not match metric dimension {metric.d}")
        if not 0 < self.nu < self.nu_tilde <= 1:
            raise ValueError(f"Cone apertures need 0 < nu < nu_tilde <= 1, got {self.nu}, {self.nu_tilde}")
        if not np.any(self.h):
            raise ValueError("Cones need a non-zero drift")

    @property
    def d(self) -> int:
        return self.metric.d

    def _coefficient(self, tilde: bool) -> float:
        return 1.0 - (self.nu_tilde if tilde else self.nu)

    def membership(self, x: Sequence[float], tilde: bool = False) -> Membership:
        x = np.asarray(x, dtype=float)
        c = self._coefficient(tilde)
        drift = float(self.h @ x)
        mid = self.metric(x)
        lo, hi = self.metric.bracket(x)
        margin = drift - c * mid
        conservative = drift - c * hi >= -TOL
        optimistic = drift - c * lo >= -TOL
        return Membership(margin >= -TOL, margin, conservative, conservative != optimistic)

    def conservative_many(self, points, tilde: bool = True) -> np.ndarray:
        """Vectorised conservative membership (upper ξ bracket)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _, hi = self.metric.bracket_many(pts)
        return pts @ self.h - self._coefficient(tilde) * hi >= -TOL

    def conservative_margin_many(self, points, tilde: bool = True) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _, hi = self.metric.bracket_many(pts)
        return pts @ self.h - self._coefficient(tilde) * hi

    def designated_direction(self) -> Tuple[int, ...]:
        """
        Unit lattice vector e_h deepest inside Ỹ_h.

        Raises:
            ValueError: If no unit lattice vector is interior to Ỹ_h
        """
        eye = np.vstack([np.eye(self.d), -np.eye(self.d)])
        margins = self.conservative_margin_many(eye, tilde=True)
        best = int(np.argmax(margins))
        if margins[best] <= TOL:
            raise ValueError(f"No lattice direction is interior to the enlarged cone of h={tuple(self.h)}")
        return tuple(int(c) for c in eye[best])

    def to_json(self) -> dict:
        return {
            "h": [float(c) for c in self.h],
            "nu": self.nu,
            "nu_tilde": self.nu_tilde,
            "metric": self.metric.describe(),
        }

    @classmethod
    def from_json(cls, data: dict, metric: XiMetric) -> "ConeSpec":
        return cls(data["h"], metric, data["nu"], data["nu_tilde"])

    def save(self, filename) -> FilePath:
        target = FilePath(filename)
        with open(target, "w") as f:
            json.dump(self.to_json(), f, indent=2)
        return target


def cone_membership(x: Sequence[float], cone: ConeSpec, tilde: bool = False) -> Membership:
    """Membership of x in Y_h (or Ỹ_h when tilde) with signed margin."""
    return cone.membership(x, tilde=tilde)


@dataclass
class SeparationReport:
    ok: bool
    lemma_ok: bool
    aperture_ok: bool
    ball_ok: bool
    c_bar: float
    witness: Optional[dict] = None

    def __bool__(self) -> bool:
        return self.ok


def check_separation(cone: ConeSpec, kappa: float, directions: Optional[np.ndarray] = None) -> SeparationReport:
    """
    Grid checks of the cone geometry at scale κ.

    1. x, y ∈ ∂U ∩ Y_h ⇒ ξ(x + κy) > 1.
    2. Ỹ_h has aperture below π: no antipodal pair of grid directions both
       (possibly) in Ỹ_h.
    3. ξ-balls of radius c̄κ around grid points of Y_h ∖ U lie in Ỹ_h,
       c̄ = max_{x∈U} |x|.

    Returns:
        SeparationReport; a failing check carries a witness
    """
    if kappa < 0:
        raise ValueError(f"kappa must be non-negative, got {kappa}")
    metric = cone.metric
    units = unit_grid(cone.d) if directions is None else np.asarray(directions, dtype=float)
    boundary = units / metric.many(units)[:, None]
    c_bar = float(np.linalg.norm(metric.boundary_samples(), axis=1).max())
    witness = None

    in_y = np.array([cone.membership(p).member for p in boundary])
    ys = boundary[in_y]
    lemma_ok = True
    if len(ys):
        sums = ys[:, None, :] + kappa * ys[None, :, :]
        values = metric.many(sums.reshape(-1, cone.d)).reshape(len(ys), len(ys))
        if values.min() <= 1.0 + TOL:
            i, j = np.unravel_index(np.argmin(values), values.shape)
            lemma_ok = False
            witness = {"check": "lemma", "x": ys[i].tolist(), "y": ys[j].tolist(), "xi": float(values[i, j])}

    optimistic = np.array([
        float(cone.h @ u) - (1 - cone.nu_tilde) * metric.bracket(u)[0] >= -TOL for u in units
    ])
    aperture_ok = True
    for i, u in enumerate(units):
        j = int(np.argmin(np.linalg.norm(units + u, axis=1)))
        if np.allclose(units[j], -u) and optimistic[i] and optimistic[j]:
            aperture_ok = False
            witness = witness or {"check": "aperture", "direction": u.tolist()}
            break

    ball_ok = True
    if kappa > 0:
        radius = c_bar * kappa
        offsets = radius * units / metric.many(units)[:, None]
        for p in ys:
            for scale in (1.05, 1.5, 2.0, 3.0):
                z = scale * p
                if not cone.membership(z).member:
                    continue
                if not np.all(cone.conservative_many(z + offsets, tilde=True)):
                    ball_ok = False
                    witness = witness or {"check": "ball", "center": z.tolist(), "radius": radius}
                    break
            if not ball_ok:
                break

    ok = lemma_ok and aperture_ok and ball_ok and kappa > 0
    if not ok:
        logger.debug("separation check failed: %s", witness)
    return SeparationReport(ok, lemma_ok, aperture_ok, ball_ok, c_bar, witness)
