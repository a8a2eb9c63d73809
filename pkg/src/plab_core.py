"""
polymerlab - Core Library

Paths, local times, one-site potentials and the grand-canonical weights of
self-attractive random walks. Every other module calls into this kernel.
"""

import logging
import math
import os
import re
import zlib
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from itertools import permutations, product
from pathlib import Path as FilePath
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

TOOL_NAME = "polymerlab"
TOOL_VERSION = "1.0.0"

Point = Tuple[int, ...]


class InvalidPotential(ValueError):
    """Raised when a potential fails attractivity or sub-linearity checks."""

    def __init__(self, message: str, report: "ValidationReport"):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# Lattice helpers
# ---------------------------------------------------------------------------

def unit_vector(axis: int, d: int) -> Point:
    """Return the signed unit vector for a step code (+i / -i, 1-based)."""
    if axis == 0 or abs(axis) > d:
        raise ValueError(f"Invalid step code {axis} for dimension {d}")
    vec = [0] * d
    vec[abs(axis) - 1] = 1 if axis > 0 else -1
    return tuple(vec)


def step_code(delta: Sequence[int]) -> int:
    """Inverse of unit_vector: the signed axis index of a unit step."""
    nonzero = [(i, v) for i, v in enumerate(delta) if v != 0]
    if len(nonzero) != 1 or abs(nonzero[0][1]) != 1:
        raise ValueError(f"Not a nearest-neighbour step: {tuple(delta)}")
    i, v = nonzero[0]
    return (i + 1) * v


def step_codes(d: int) -> List[int]:
    """All 2d step codes in a fixed order: +1, -1, +2, -2, ..."""
    codes = []
    for i in range(1, d + 1):
        codes.extend([i, -i])
    return codes


def l1_norm(x: Sequence[int]) -> int:
    return sum(abs(c) for c in x)


def lattice_symmetries(d: int) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """
    Enumerate the hyperoctahedral group of Z^d.

    Each symmetry is (perm, signs): coordinate i of the image is
    signs[i] * x[perm[i]].
    """
    return [
        (perm, signs)
        for perm in permutations(range(d))
        for signs in product((1, -1), repeat=d)
    ]


def apply_symmetry(sym: Tuple[Tuple[int, ...], Tuple[int, ...]], x: Sequence) -> tuple:
    perm, signs = sym
    return tuple(signs[i] * x[perm[i]] for i in range(len(perm)))


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Path:
    """
    Finite nearest-neighbour lattice trajectory.

    Steps are signed axis codes: +1 is e1, -2 is -e2 and so on.
    """

    start: Point
    steps: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(int(c) for c in self.start))
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        d = len(self.start)
        if not 1 <= d <= 4:
            raise ValueError(f"Dimension must be in 1..4, got {d}")
        for s in self.steps:
            if s == 0 or abs(s) > d:
                raise ValueError(f"Invalid step code {s} for dimension {d}")

    @classmethod
    def from_vertices(cls, vertices: Sequence[Sequence[int]]) -> "Path":
        if not vertices:
            raise ValueError("A path needs at least one vertex")
        steps = [
            step_code([b - a for a, b in zip(u, v)])
            for u, v in zip(vertices[:-1], vertices[1:])
        ]
        return cls(tuple(vertices[0]), tuple(steps))

    @classmethod
    def straight(cls, d: int, axis: int, n: int) -> "Path":
        return cls((0,) * d, (axis,) * n)

    @property
    def d(self) -> int:
        return len(self.start)

    @property
    def length(self) -> int:
        return len(self.steps)

    @cached_property
    def vertex_array(self) -> np.ndarray:
        """(T+1, d) integer array of visited sites in time order."""
        d = self.d
        moves = np.zeros((self.length + 1, d), dtype=np.int64)
        if self.steps:
            codes = np.asarray(self.steps, dtype=np.int64)
            moves[np.arange(1, self.length + 1), np.abs(codes) - 1] = np.sign(codes)
        return np.cumsum(moves, axis=0) + np.asarray(self.start, dtype=np.int64)

    @cached_property
    def vertices(self) -> Tuple[Point, ...]:
        return tuple(tuple(int(c) for c in row) for row in self.vertex_array)

    @property
    def endpoint(self) -> Point:
        return self.vertices[-1]

    @property
    def displacement(self) -> Point:
        return tuple(b - a for a, b in zip(self.start, self.endpoint))

    def concat(self, other: "Path") -> "Path":
        """Concatenation; other must start where self ends."""
        if other.start != self.endpoint:
            raise ValueError(
                f"Cannot concatenate: {other.start} does not match endpoint {self.endpoint}"
            )
        return Path(self.start, self.steps + other.steps)

    def sub(self, i: int, j: int) -> "Path":
        """Sub-path between vertex indices i and j (inclusive)."""
        if not 0 <= i <= j <= self.length:
            raise ValueError(f"Bad sub-path bounds ({i}, {j}) for length {self.length}")
        return Path(self.vertices[i], self.steps[i:j])

    def reversed(self) -> "Path":
        return Path(self.endpoint, tuple(-s for s in reversed(self.steps)))

    def transformed(self, sym) -> "Path":
        return Path.from_vertices([apply_symmetry(sym, v) for v in self.vertices])

    def __len__(self) -> int:
        return self.length


class LocalTimeField(Counter):
    """Visit counts ℓ[x] of a path, both endpoints included."""

    @property
    def total_mass(self) -> int:
        return sum(self.values())

    @property
    def range_size(self) -> int:
        return len(self)


def local_times(path: Path, skip_first: bool = False, skip_last: bool = False) -> LocalTimeField:
    """
    Count visits per site.

    Args:
        path: Lattice path
        skip_first: Exclude the initial vertex (half-open pieces)
        skip_last: Exclude the final vertex

    Returns:
        LocalTimeField keyed by lattice points
    """
    verts = path.vertices
    lo = 1 if skip_first else 0
    hi = len(verts) - 1 if skip_last else len(verts)
    return LocalTimeField(verts[lo:hi])


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------

POTENTIAL_KINDS = ("sausage", "power", "annealed", "annealed-gamma", "annealed-dist")


@dataclass(frozen=True)
class PotentialSpec:
    """
    One-site potential φ(ℓ) with φ(0) = 0.

    kinds:
        sausage         β·1{ℓ ≥ 1}
        power           β·ℓ^α
        annealed        −log E e^{−ℓV}, V with finitely many atoms (inf allowed)
        annealed-gamma  V ~ Gamma(k, θ): k·log(1 + ℓθ)
        annealed-dist   V ~ any scipy.stats distribution, by quadrature
    """

    kind: str
    beta: float = 0.0
    alpha: float = 1.0
    atoms: Tuple[Tuple[float, float], ...] = ()
    dist: str = ""
    dist_params: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"Unknown potential kind '{self.kind}', expected one of {POTENTIAL_KINDS}")
        if self.kind in ("sausage", "power") and self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.kind == "power" and not 0 < self.alpha:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.kind == "annealed":
            if not self.atoms:
                raise ValueError("annealed potential needs at least one atom")
            total = sum(p for _, p in self.atoms)
            if any(p < 0 for _, p in self.atoms) or not math.isclose(total, 1.0, abs_tol=1e-9):
                raise ValueError(f"annealed atom probabilities must be >= 0 and sum to 1, got {total}")
            if any(v < 0 for v, _ in self.atoms):
                raise ValueError("annealed trap depths must be non-negative")
        if self.kind == "annealed-gamma" and (self.beta <= 0 or self.alpha <= 0):
            raise ValueError("annealed-gamma needs positive shape and scale")
        if self.kind == "annealed-dist" and not hasattr(stats, self.dist):
            raise ValueError(f"Unknown scipy.stats distribution '{self.dist}'")

    @classmethod
    def sausage(cls, beta: float) -> "PotentialSpec":
        return cls("sausage", beta=beta)

    @classmethod
    def power(cls, beta: float, alpha: float) -> "PotentialSpec":
        return cls("power", beta=beta, alpha=alpha)

    @classmethod
    def annealed(cls, atoms: Dict[float, float]) -> "PotentialSpec":
        return cls("annealed", atoms=tuple(sorted((float(v), float(p)) for v, p in atoms.items())))

    @classmethod
    def annealed_gamma(cls, shape: float, scale: float) -> "PotentialSpec":
        return cls("annealed-gamma", beta=shape, alpha=scale)

    @classmethod
    def annealed_dist(cls, dist: str, **params: float) -> "PotentialSpec":
        return cls("annealed-dist", dist=dist, dist_params=tuple(sorted(params.items())))

    @lru_cache(maxsize=4096)
    def phi(self, ell: int) -> float:
        """Evaluate φ(ℓ); memoised per ℓ."""
        if ell < 0:
            raise ValueError(f"Local time must be non-negative, got {ell}")
        if ell == 0:
            return 0.0
        if self.kind == "sausage":
            return self.beta
        if self.kind == "power":
            return self.beta * ell ** self.alpha
        if self.kind == "annealed":
            values = np.array([v for v, _ in self.atoms])
            probs = np.array([p for _, p in self.atoms])
            exponents = np.where(np.isinf(values), -np.inf, -ell * values)
            return float(-logsumexp(exponents, b=probs))
        if self.kind == "annealed-gamma":
            return self.beta * math.log1p(ell * self.alpha)
        frozen = getattr(stats, self.dist)(**dict(self.dist_params))
        lo, hi = frozen.support()
        value, _ = integrate.quad(lambda v: math.exp(-ell * v) * frozen.pdf(v), lo, hi, limit=200)
        return -math.log(value)

    def table(self, n: int) -> np.ndarray:
        """φ(0..n) as an array."""
        return np.array([self.phi(ell) for ell in range(n + 1)])

    def describe(self) -> str:
        """Compact text form, inverse of parse_potential."""
        if self.kind == "sausage":
            return f"sausage:{self.beta!r}"
        if self.kind == "power":
            return f"power:{self.beta!r},{self.alpha!r}"
        if self.kind == "annealed":
            return "annealed:" + ",".join(f"{_fmt_depth(v)}={p!r}" for v, p in self.atoms)
        if self.kind == "annealed-gamma":
            return f"annealed-gamma:{self.beta!r},{self.alpha!r}"
        params = "".join(f",{k}={v!r}" for k, v in self.dist_params)
        return f"annealed-dist:{self.dist}{params}"


def _fmt_depth(v: float) -> str:
    return "inf" if math.isinf(v) else repr(v)


def parse_potential(text: str) -> PotentialSpec:
    """
    Parse a compact potential string.

    Examples: "sausage:0.5", "power:1.0,0.5", "annealed:0=0.6,inf=0.4",
    "annealed-gamma:2,1", "annealed-dist:expon,scale=2".

    Raises:
        ValueError: If the text is malformed
    """
    m = re.fullmatch(r"\s*([a-z-]+)\s*:\s*(.*?)\s*", text)
    if not m:
        raise ValueError(f"Malformed potential '{text}'")
    kind, body = m.group(1), m.group(2)
    parts = [p.strip() for p in body.split(",") if p.strip()]
    try:
        if kind == "sausage" and len(parts) == 1:
            return PotentialSpec.sausage(float(parts[0]))
        if kind == "power" and len(parts) == 2:
            return PotentialSpec.power(float(parts[0]), float(parts[1]))
        if kind == "annealed":
            atoms = {}
            for part in parts:
                depth, prob = part.split("=")
                atoms[float(depth)] = float(prob)
            return PotentialSpec.annealed(atoms)
        if kind == "annealed-gamma" and len(parts) == 2:
            return PotentialSpec.annealed_gamma(float(parts[0]), float(parts[1]))
        if kind == "annealed-dist" and parts:
            params = {}
            for part in parts[1:]:
                key, value = part.split("=")
                params[key.strip()] = float(value)
            return PotentialSpec.annealed_dist(parts[0], **params)
    except ValueError as e:
        raise ValueError(f"Malformed potential '{text}': {e}")
    raise ValueError(f"Malformed potential '{text}'")


@dataclass
class ValidationReport:
    """Outcome of the finite-grid checks on a potential."""

    monotone: bool
    subadditive: bool
    sublinear: bool
    positive: bool
    lambda0: float
    witness: Optional[Tuple[int, int]] = None
    messages: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.monotone and self.subadditive and self.sublinear and self.positive


def validate_potential(
    phi: PotentialSpec,
    grid: int = 200,
    horizon: int = 10_000,
    tolerance: float = 0.05,
    strict: bool = True,
) -> ValidationReport:
    """
    Check monotonicity, subadditivity, sub-linearity and φ(1) > 0 on finite grids.

    Sub-linearity is read off the slope of φ over the last doubling,
    (φ(2N) − φ(N))/N, compared with the same slope sixteen times earlier.
    A linear part λ₀ keeps the ratio at 1; sub-linear growth pulls it down.

    Args:
        phi: Potential to check
        grid: Subadditivity is tested for all 1 ≤ ℓ, m ≤ grid
        horizon: N for the sub-linearity trend
        tolerance: Relative slope decrease required to call φ sub-linear
        strict: Raise InvalidPotential instead of returning a failing report

    Returns:
        ValidationReport

    Raises:
        InvalidPotential: If strict and a check fails
    """
    table = phi.table(2 * grid)
    messages = []

    monotone = bool(np.all(np.diff(table) >= -1e-12))
    if not monotone:
        messages.append("φ is not non-decreasing")

    ell = np.arange(1, grid + 1)
    excess = table[ell[:, None] + ell[None, :]] - table[ell][:, None] - table[ell][None, :]
    worst = np.unravel_index(np.argmax(excess), excess.shape)
    subadditive = bool(excess[worst] <= 1e-12)
    witness = None
    if not subadditive:
        witness = (int(worst[0]) + 1, int(worst[1]) + 1)
        messages.append(f"subadditivity fails at (ℓ, m) = {witness}")

    positive = bool(table[1] > 0)
    if not positive:
        messages.append("φ(1) = 0: no attraction, ξ degenerates")

    late = (phi.phi(2 * horizon) - phi.phi(horizon)) / horizon
    early_n = max(horizon // 16, 1)
    early = (phi.phi(2 * early_n) - phi.phi(early_n)) / early_n
    ratio_small = phi.phi(horizon) / horizon < 1e-3
    decaying = early > 0 and late / early <= 1.0 - tolerance
    sublinear = bool(ratio_small or decaying or early <= 0)
    lambda0 = 0.0 if sublinear else float(late)
    if not sublinear:
        messages.append(
            f"φ(n)/n does not decay (estimated λ₀ = {lambda0:.6g}); "
            f"shift λ by λ₀ and use φ(n) − λ₀·n instead"
        )

    report = ValidationReport(monotone, subadditive, sublinear, positive, lambda0, witness, messages)
    if strict and not report.valid:
        raise InvalidPotential("; ".join(messages), report)
    return report


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightParams:
    """Drift h and killing rate λ of the grand-canonical weight."""

    h: Tuple[float, ...]
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "h", tuple(float(c) for c in self.h))


def potential_energy(path: Path, phi: PotentialSpec, skip_first: bool = False) -> float:
    """Φ(γ) = Σ_x φ(ℓ_γ[x])."""
    return math.fsum(phi.phi(c) for c in local_times(path, skip_first=skip_first).values())


def weight(path: Path, phi: PotentialSpec, w: WeightParams, skip_first: bool = False) -> float:
    """
    log a_{h,λ}(γ) = −Φ(γ) + h·X(γ) − λT(γ) − T(γ)·log(2d).

    Args:
        path: Lattice path
        phi: One-site potential
        w: Drift and killing rate
        skip_first: Half-open convention (initial vertex not charged)

    Returns:
        The log-weight
    """
    if len(w.h) != path.d:
        raise ValueError(f"Drift dimension {len(w.h)} does not match path dimension {path.d}")
    drift = math.fsum(hc * xc for hc, xc in zip(w.h, path.displacement))
    return (
        -potential_energy(path, phi, skip_first=skip_first)
        + drift
        - w.lam * path.length
        - path.length * math.log(2 * path.d)
    )


# ---------------------------------------------------------------------------
# Ensemble configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleConfig:
    """
    Model parameters shared by every module.

    kind is "canonical" (fixed length n) or "crossing" (fixed endpoint x).
    """

    d: int = 2
    potential: PotentialSpec = PotentialSpec.sausage(0.5)
    h: Tuple[float, ...] = ()
    lam: float = 0.0
    kind: str = "canonical"
    K: int = 5

    def __post_init__(self):
        if not 1 <= self.d <= 4:
            raise ValueError(f"d must be in 1..4, got {self.d}")
        h = tuple(float(c) for c in self.h) if self.h else (0.0,) * self.d
        if len(h) != self.d:
            raise ValueError(f"Drift {h} does not have dimension {self.d}")
        object.__setattr__(self, "h", h)
        if self.kind not in ("canonical", "crossing"):
            raise ValueError(f"Unknown ensemble kind '{self.kind}'")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")

    @property
    def weights(self) -> WeightParams:
        return WeightParams(self.h, self.lam)

    def with_drift(self, h: Sequence[float]) -> "EnsembleConfig":
        return EnsembleConfig(self.d, self.potential, tuple(h), self.lam, self.kind, self.K)


# ---------------------------------------------------------------------------
# Randomness and parallelism
# ---------------------------------------------------------------------------

def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """
    Counter-based random stream for (seed, "module.purpose", indices...).

    The key is SeedSequence([seed, crc32(name), *index]); the bit generator
    is Philox, so streams for different indices never overlap.
    """
    key = [int(seed), zlib.crc32(name.encode("utf-8"))] + [int(i) for i in index]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def worker_count(requested: Optional[int] = None) -> int:
    """Workers allowed for parallel jobs, capped by POLYMERLAB_THREADS."""
    env = os.environ.get("POLYMERLAB_THREADS")
    cap = int(env) if env and env.isdigit() and int(env) > 0 else 1
    if requested is None:
        return cap
    return max(1, min(int(requested), cap))


# ---------------------------------------------------------------------------
# Path text format
# ---------------------------------------------------------------------------

def format_path(path: Path) -> str:
    """Serialise as `d;x0,...;s1 s2 ...` with signed axis step codes."""
    start = ",".join(str(c) for c in path.start)
    steps = " ".join(f"{s:+d}" for s in path.steps)
    return f"{path.d};{start};{steps}"


def parse_path(line: str) -> Path:
    """
    Parse one line of the Path text format.

    Raises:
        ValueError: If the line is malformed
    """
    parts = line.strip().split(";")
    if len(parts) != 3:
        raise ValueError(f"Expected 'd;start;steps', got '{line.strip()}'")
    d = int(parts[0])
    start = tuple(int(c) for c in parts[1].split(","))
    if len(start) != d:
        raise ValueError(f"Start {start} does not have dimension {d}")
    tokens = parts[2].split()
    if any(not re.fullmatch(r"[+-]\d+", t) for t in tokens):
        raise ValueError(f"Malformed step list '{parts[2]}'")
    return Path(start, tuple(int(t) for t in tokens))


def write_paths(filename, paths: Iterable[Path], header: Optional[str] = None) -> FilePath:
    target = FilePath(filename)
    with open(target, "w") as f:
        if header:
            for line in header.splitlines():
                f.write(f"# {line}\n")
        for path in paths:
            f.write(format_path(path) + "\n")
    return target


def read_paths(filename) -> List[Path]:
    """
    Read a Path text file, skipping blank and '#' lines.

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: With the line number of the first malformed line
    """
    source = FilePath(filename)
    if not source.exists():
        raise FileNotFoundError(f"Path file missing: {source}")
    paths = []
    with open(source) as f:
        for line_num, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                paths.append(parse_path(line))
            except ValueError as e:
                raise ValueError(f"{source.name} line {line_num}: {e}")
    return paths
