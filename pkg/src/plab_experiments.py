#!/usr/bin/env python3
"""
polymerlab - Experiment runner

Named, seeded experiments that chain the library modules, write CSV/JSON
artifacts into one run directory and finish with a manifest. Configuration
is INI text; `--set section.key=value` overrides win over the file.
"""

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
import traceback
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path as FilePath
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Allow running as a script from the repository root
sys.path.insert(0, str(FilePath(__file__).parent))

from plab_core import TOOL_NAME, TOOL_VERSION, EnsembleConfig, PotentialSpec, parse_potential
from plab_geometry import ConeSpec, CriticalShape, XiCaps, XiEstimate, check_separation, direction_grid, estimate_xi
from plab_oracle import DEFAULT_CAPS, canonical_moments, small_x_fraction
from plab_renewal import (
    boundary_weights,
    clt_check,
    crossing_velocity,
    decompose,
    enumerate_irreducible,
    irreducible_census,
    NotEnoughConePoints,
    write_piece_library,
)
from plab_sampler import SamplerConfig, estimate_observable, sample_canonical
from plab_skeleton import SkeletonConstants, check_skeleton, decorate, energy_split_gap, skeleton_census
from plab_srw import (
    Region,
    clipped_range_until_exit,
    confinement_tail,
    exit_distribution,
    green_function,
    green_growth,
    write_table,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = "1.0"
REQUIRED_MANIFEST_KEYS = (
    "version", "generator", "experiment", "config_hash", "seed",
    "started", "finished", "status", "files", "assertions",
)


class ConfigError(ValueError):
    """Invalid configuration value; key is the offending `section.key`."""

    def __init__(self, message: str, key: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class MissingTableError(KeyError):
    """A run directory lacks the table a plot kind needs."""

    def __init__(self, table: str, directory):
        super().__init__(f"table '{table}' is missing from {directory}")
        self.table = table


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentParams:
    """Knobs of the individual experiments ([experiment] section)."""

    direction: Tuple[int, ...] = (1, 0)
    drift_scale: float = 1.0
    sizes: Tuple[int, ...] = (6, 8, 10)
    path_length: int = 30
    renewal_length: int = 8
    distances: Tuple[int, ...] = (8, 16, 24)
    clt_n: int = 10_000
    clt_reps: int = 2000
    tolerance: float = 4.0
    green_sizes: Tuple[int, ...] = (8, 16, 32, 64, 128)
    confinement_sizes: Tuple[int, ...] = (5, 10, 20)
    exit_radii: Tuple[int, ...] = (4, 8, 16)
    range_sizes: Tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        if not any(self.direction):
            raise ValueError("direction must be a non-zero lattice vector")
        if self.drift_scale <= 0:
            raise ValueError(f"drift_scale must be positive, got {self.drift_scale}")
        if self.path_length < 1 or self.renewal_length < 1:
            raise ValueError("path_length and renewal_length must be positive")
        if self.clt_n < 1 or self.clt_reps < 2:
            raise ValueError("clt_n must be positive and clt_reps at least 2")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "srw-appendix"
    seed: int = 0
    out: str = "polymerlab-run"
    ensemble: EnsembleConfig = EnsembleConfig()
    sampler: SamplerConfig = SamplerConfig()
    caps: XiCaps = XiCaps()
    max_l1: int = 0
    constants: SkeletonConstants = SkeletonConstants()
    params: ExperimentParams = ExperimentParams()

    @property
    def sampler_config(self) -> SamplerConfig:
        return replace(self.sampler, seed=self.seed)


# section -> key -> (attribute of ExperimentConfig or None, field name)
_LAYOUT: Dict[str, Dict[str, Tuple[Optional[str], str]]] = {
    "run": {k: (None, k) for k in ("experiment", "seed", "out")},
    "ensemble": {k: ("ensemble", k) for k in ("d", "potential", "h", "lam", "kind")},
    "sampler": {f.name: ("sampler", f.name) for f in dataclasses.fields(SamplerConfig) if f.name != "seed"},
    "geometry": {**{f.name: ("caps", f.name) for f in dataclasses.fields(XiCaps)}, "max_l1": (None, "max_l1")},
    "coarse": {"K": ("ensemble", "K"), **{f.name: ("constants", f.name) for f in dataclasses.fields(SkeletonConstants)}},
    "experiment": {f.name: ("params", f.name) for f in dataclasses.fields(ExperimentParams)},
}


def _format(value) -> str:
    if isinstance(value, PotentialSpec):
        return value.describe()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, PotentialSpec):
            return parse_potential(text)
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if not text:
                return ()
            as_int = bool(default) and all(isinstance(v, int) for v in default)
            return tuple((int if as_int else float)(part) for part in text.split(","))
        return text
    except (KeyError, ValueError) as e:
        raise ConfigError(f"cannot parse '{text}' ({e})", key) from None


def _get(config: ExperimentConfig, attr: Optional[str], name: str):
    return getattr(getattr(config, attr) if attr else config, name)


def config_sections(config: ExperimentConfig) -> Dict[str, Dict[str, str]]:
    """Every configuration value as INI text, section by section."""
    return {
        section: {key: _format(_get(config, attr, name)) for key, (attr, name) in keys.items()}
        for section, keys in _LAYOUT.items()
    }


def save_config(config: ExperimentConfig, filename) -> FilePath:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read_dict(config_sections(config))
    target = FilePath(filename)
    with open(target, "w") as f:
        parser.write(f)
    return target


def config_hash(config: ExperimentConfig) -> str:
    """sha256 of the sorted configuration values; the output directory is not part of it."""
    sections = config_sections(config)
    sections["run"].pop("out")
    return hashlib.sha256(json.dumps(sections, sort_keys=True).encode()).hexdigest()


def _resolve_key(key: str) -> Tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in _LAYOUT or name not in _LAYOUT[section]:
            raise ConfigError("unknown configuration key", key)
        return section, name
    owners = [s for s, keys in _LAYOUT.items() if key in keys]
    if len(owners) != 1:
        reason = "unknown configuration key" if not owners else f"ambiguous key, found in {owners}"
        raise ConfigError(reason, key)
    return owners[0], key


def load_config(filename=None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    Build an ExperimentConfig from an INI file and `key=value` overrides.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: On unknown keys, unparsable values or failed validation
    """
    values: Dict[str, Dict[str, str]] = {s: {} for s in _LAYOUT}
    if filename is not None:
        source = FilePath(filename)
        if not source.exists():
            raise FileNotFoundError(f"Configuration file missing: {source}")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        parser.read(source)
        for section in parser.sections():
            for key, text in parser.items(section):
                values[_resolve_key(f"{section}.{key}")[0]][key] = text
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override must look like key=value", item)
        key, text = item.split("=", 1)
        section, name = _resolve_key(key.strip())
        values[section][name] = text

    defaults = ExperimentConfig()
    parts: Dict[Optional[str], Dict[str, object]] = {}
    for section, given in values.items():
        for key, text in given.items():
            attr, name = _LAYOUT[section][key]
            parts.setdefault(attr, {})[name] = _parse(text, _get(defaults, attr, name), f"{section}.{key}")

    # a changed dimension invalidates the default drift
    ensemble_kw = parts.get("ensemble", {})
    if "d" in ensemble_kw and "h" not in ensemble_kw:
        ensemble_kw["h"] = ()
    built = {}
    for attr, section in (("ensemble", "ensemble"), ("sampler", "sampler"), ("caps", "geometry"),
                          ("constants", "coarse"), ("params", "experiment")):
        try:
            built[attr] = replace(getattr(defaults, attr), **parts.get(attr, {}))
        except ValueError as e:
            raise ConfigError(str(e), section) from None
    config = replace(defaults, **parts.get(None, {}), **built)
    if config.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{config.experiment}', expected one of {sorted(EXPERIMENTS)}",
                          "run.experiment")
    return config


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    seed: int
    started: str
    finished: str = ""
    status: str = "running"
    files: List[dict] = field(default_factory=list)
    assertions: Dict[str, bool] = field(default_factory=dict)
    error: Optional[str] = None
    directory: Optional[FilePath] = None

    @property
    def passed(self) -> bool:
        return self.status == "passed"

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def file_names(self) -> List[str]:
        return [f["name"] for f in self.files]

    def to_json(self) -> dict:
        data = {
            "version": MANIFEST_VERSION,
            "generator": {"tool": TOOL_NAME, "version": TOOL_VERSION},
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "status": self.status,
            "files": self.files,
            "assertions": self.assertions,
        }
        if self.error:
            data["error"] = self.error
        return data

    def collect_files(self):
        """List every file of the run directory except the manifest itself."""
        self.files = []
        for item in sorted(self.directory.rglob("*")):
            if item.is_file() and item.name != MANIFEST_NAME:
                self.files.append({
                    "name": item.relative_to(self.directory).as_posix(),
                    "bytes": item.stat().st_size,
                    "sha256": hashlib.sha256(item.read_bytes()).hexdigest(),
                })

    def save(self) -> FilePath:
        self.collect_files()
        target = self.directory / MANIFEST_NAME
        with open(target, "w") as f:
            json.dump(self.to_json(), f, indent=2)
        return target


def load_manifest(directory) -> RunManifest:
    """
    Load and check a finished run directory.

    Raises:
        FileNotFoundError: If the manifest or a listed file is missing
        ValueError: If the manifest lacks required keys
    """
    directory = FilePath(directory)
    source = directory / MANIFEST_NAME
    if not source.exists():
        raise FileNotFoundError(f"Manifest missing: {source}")
    with open(source) as f:
        data = json.load(f)
    missing = [k for k in REQUIRED_MANIFEST_KEYS if k not in data]
    if missing:
        raise ValueError(f"{source.name}: missing keys {missing}")
    for entry in data["files"]:
        if not (directory / entry["name"]).exists():
            raise FileNotFoundError(f"Listed file missing: {directory / entry['name']}")
    return RunManifest(
        data["experiment"], data["config_hash"], data["seed"], data["started"], data["finished"],
        data["status"], data["files"], data["assertions"], data.get("error"), directory,
    )


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

class RunContext:
    """Shared state of one run: output directory, assertions and a summary."""

    def __init__(self, config: ExperimentConfig, directory: FilePath):
        self.config = config
        self.directory = directory
        self.assertions: Dict[str, bool] = {}
        self.summary: Dict[str, object] = {}
        self._metric: Optional[XiEstimate] = None

    @property
    def cfg(self) -> EnsembleConfig:
        return self.config.ensemble

    @property
    def params(self) -> ExperimentParams:
        return self.config.params

    def file(self, name: str) -> FilePath:
        return self.directory / name

    def check(self, name: str, ok, detail: str = "") -> bool:
        ok = bool(ok)
        self.assertions[name] = ok
        if ok:
            logger.info("assertion %s passed %s", name, detail)
        else:
            logger.warning("assertion %s failed %s", name, detail)
        return ok

    def metric(self) -> XiEstimate:
        if self._metric is None:
            directions = direction_grid(self.cfg.d, self.config.max_l1 or None)
            self._metric = estimate_xi(directions, self.cfg, self.config.caps)
            self._metric.save_csv(self.file("xi.csv"))
        return self._metric

    def critical_drift(self) -> Tuple[np.ndarray, CriticalShape]:
        """Conjugate drift of the configured direction, scaled by drift_scale."""
        direction = self.params.direction
        if len(direction) != self.cfg.d:
            raise ConfigError(f"direction {direction} does not have dimension {self.cfg.d}", "experiment.direction")
        shape = CriticalShape(self.metric())
        drift = shape.conjugate_drift(direction)
        h = drift.h * self.params.drift_scale
        self.summary["drift"] = {
            "direction": list(direction),
            "h": h.tolist(),
            "gap": drift.gap,
            "face_size": len(drift.face),
        }
        return h, shape

    def cone(self, h) -> ConeSpec:
        c = self.config.constants
        cone = ConeSpec(h, self.metric(), c.nu, c.nu_tilde)
        cone.save(self.file("cone.json"))
        return cone


EXPERIMENTS: Dict[str, Tuple[Callable[[RunContext], None], str]] = {}


def experiment(name: str, description: str):
    def register(fn: Callable[[RunContext], None]):
        EXPERIMENTS[name] = (fn, description)
        return fn
    return register


def _write_rows(filename: FilePath, header: Sequence[str], rows) -> FilePath:
    with open(filename, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return filename


def _opposite(units: np.ndarray, i: int) -> Optional[int]:
    match = np.nonzero(np.all(np.isclose(units, -units[i]), axis=1))[0]
    return int(match[0]) if match.size else None


@experiment("xi-map", "ξ brackets along primitive lattice directions, with symmetry and triangle checks")
def _xi_map(ctx: RunContext):
    xi = ctx.metric()
    width = xi.upper - xi.lower
    asym = []
    for i in range(len(xi.units)):
        j = _opposite(xi.units, i)
        if j is not None:
            asym.append(abs(xi.mid[i] - xi.mid[j]) - width[i] - width[j])
    ctx.check("xi-symmetric", all(a <= 1e-9 for a in asym), f"worst excess {max(asym, default=0.0):.3g}")

    violations = 0
    for i, j in zip(*np.triu_indices(len(xi.vectors))):
        s = xi.vectors[i] + xi.vectors[j]
        if not np.any(s):
            continue
        norm_s = np.linalg.norm(s)
        k = np.nonzero(np.all(np.isclose(xi.units, s / norm_s), axis=1))[0]
        if k.size:
            lhs = xi.lower[k[0]] * norm_s
            rhs = xi.upper[i] * np.linalg.norm(xi.vectors[i]) + xi.upper[j] * np.linalg.norm(xi.vectors[j])
            violations += int(lhs > rhs + 1e-9)
    ctx.check("xi-triangle", violations == 0, f"{violations} violations")
    ctx.check("xi-positive", np.all(xi.upper > 0))
    ctx.summary["xi"] = {"directions": len(xi.vectors), "max_width": float(width.max())}


@experiment("critical-shape", "∂U samples, the polar set K and conjugate drifts")
def _critical_shape(ctx: RunContext):
    h, shape = ctx.critical_drift()
    shape.write_csv(ctx.file("shape.csv"))
    delta0 = shape.strict_convexity_margin()
    ctx.summary["strict_convexity_margin"] = delta0
    ctx.check("polarity", shape.polarity_violation() <= 1e-9)
    ctx.check("convexity-margin", delta0 >= -1e-9, f"delta0={delta0:.3g}")
    ctx.check("drift-on-boundary", abs(shape.metric.dual_norm(h) - ctx.params.drift_scale) <= 1e-6)
    cone = ctx.cone(h)
    report = check_separation(cone, ctx.config.constants.kappa)
    ctx.summary["separation"] = {"ok": report.ok, "c_bar": report.c_bar}
    ctx.check("cone-separation", report.ok)


@experiment("skeleton-census", "decorated skeletons of sampled paths at the critical drift")
def _skeleton_census(ctx: RunContext):
    h, _ = ctx.critical_drift()
    metric = ctx.metric()
    cfg = ctx.cfg.with_drift(h)
    batch = sample_canonical(ctx.params.path_length, cfg, ctx.config.sampler_config)
    constants = ctx.config.constants
    census = skeleton_census(batch, cfg.K, h, metric, constants)
    census.write_csv(ctx.file("census.csv"))
    structural = gaps = 0
    for path in batch.paths:
        skel = decorate(path, cfg.K, metric, constants)
        structural += int(not check_skeleton(path, skel, metric).ok)
        gaps += int(energy_split_gap(path, skel, cfg.potential, metric, constants.c1) < -1e-9)
    ctx.summary["census"] = {
        "paths": len(census.rows),
        "median_surcharge_per_length": census.median_surcharge_per_length(),
        "fraction_exceeding_0.1": census.fraction_exceeding(0.1),
    }
    ctx.check("skeleton-structure", structural == 0, f"{structural} failures")
    ctx.check("energy-split", gaps == 0, f"{gaps} failures")


def _renewal(ctx: RunContext):
    h, _ = ctx.critical_drift()
    cone = ctx.cone(h)
    stats = irreducible_census(cone, ctx.cfg, ctx.params.renewal_length)
    stats.save(ctx.file("renewal.json"))
    return h, cone, stats


@experiment("cone-renewal", "cone points, irreducible pieces and their normalisation at the critical drift")
def _cone_renewal(ctx: RunContext):
    h, cone, stats = _renewal(ctx)
    L = ctx.params.renewal_length
    pieces = list(enumerate_irreducible(cone, ctx.cfg, L, "middle"))
    write_piece_library(pieces, ctx.directory, "pieces")
    _write_rows(ctx.file("normalization.csv"), ["L", "partial_sum"],
                [(t, float(v)) for t, v in sorted(stats.normalization.items())])
    weights = boundary_weights(cone, ctx.cfg, L)
    ctx.summary["boundary_weights"] = {"backward": weights.backward, "forward": weights.forward}

    partial = [stats.normalization[t] for t in sorted(stats.normalization)]
    ctx.check("normalization-nondecreasing", all(b >= a for a, b in zip(partial, partial[1:])))
    ctx.check("normalization-near-one", 0.9 <= stats.extrapolated_total <= 1.1,
              f"extrapolated {stats.extrapolated_total:.4g}")

    cfg = ctx.cfg.with_drift(h)
    batch = sample_canonical(ctx.params.path_length, cfg, ctx.config.sampler_config)
    decomposed = worst = diamond = 0
    for path in batch.paths:
        try:
            dec = decompose(path, cone, cfg)
        except NotEnoughConePoints:
            continue
        decomposed += 1
        worst = max(worst, dec.factorization_error(cfg))
        diamond += int(not dec.diamond_ok(cone))
    ctx.summary["decomposed_paths"] = decomposed
    ctx.check("weight-factorization", worst <= 1e-10, f"worst relative error {worst:.3g}")
    ctx.check("diamond-confinement", diamond == 0, f"{diamond} failures")


@experiment("velocity-at-criticality", "𝔸_h^n(|X|/n) and the small-|x| weight across n at the critical drift")
def _velocity(ctx: RunContext):
    h, _ = ctx.critical_drift()
    cfg = ctx.cfg.with_drift(h)
    cap = DEFAULT_CAPS.get(cfg.d, 7)
    rows = []
    for n in ctx.params.sizes:
        if n <= cap:
            moments = canonical_moments(n, cfg)
            rows.append((n, moments.mean_abs, 0.0, "exact", small_x_fraction(n, cfg)))
        else:
            batch = sample_canonical(n, cfg, ctx.config.sampler_config)
            est = estimate_observable(batch, lambda p: float(np.linalg.norm(p.displacement)) / p.length)
            rows.append((n, est.value, est.stderr, "sampled", math.nan))
    _write_rows(ctx.file("velocity.csv"), ["n", "mean_abs_x_over_n", "stderr", "method", "small_x_fraction"], rows)
    ctx.check("ballistic", all(r[1] >= 0.05 for r in rows))
    ctx.check("no-decreasing-trend", all(b[1] >= a[1] - 2 * (a[2] + b[2]) - 0.02 for a, b in zip(rows, rows[1:])))
    exact = [r[4] for r in rows if r[3] == "exact"]
    if len(exact) > 1:
        ctx.check("small-x-decays", exact[-1] <= exact[0])


@experiment("crossing-T", "crossing lengths 𝔸_x(T)/|x| against 1/|v| from the renewal census")
def _crossing(ctx: RunContext):
    h, cone, stats = _renewal(ctx)
    direction = np.asarray(ctx.params.direction)
    xs = [tuple(int(c) for c in k * direction) for k in ctx.params.distances]
    trend = crossing_velocity(xs, ctx.cfg.with_drift(h), cone, ctx.config.sampler_config, stats)
    _write_rows(ctx.file("crossing_T.csv"), ["norm", "T_over_norm", "stderr", "var_T_over_norm", "exact"],
                [(r.norm, r.value, r.stderr, r.spread, int(r.exact)) for r in trend.rows])
    speed = float(np.linalg.norm(stats.velocity))
    target_err = float(np.linalg.norm(stats.velocity_stderr)) / speed ** 2
    ctx.summary["target"] = {"inverse_speed": trend.target, "stderr": target_err}
    ctx.check("monotone-toward-target", trend.monotone(slack=target_err))
    last = trend.rows[-1]
    ctx.check("agrees-at-largest", abs(last.value - trend.target) <= 3 * (last.stderr + target_err),
              f"{last.value:.4g} vs {trend.target:.4g}")


@experiment("clt", "renewal-synthesised (X − nv)/√n against N(0, Σ̂)")
def _clt(ctx: RunContext):
    _, _, stats = _renewal(ctx)
    report = clt_check(stats, ctx.params.clt_n, ctx.params.clt_reps, ctx.config.seed)
    d = stats.d
    rows = [("distance", k, -1, float(report.distances[k]), 0.0) for k in range(d)]
    for a in range(d):
        for b in range(d):
            rows.append(("covariance", a, b, float(report.covariance[a, b]), float(report.covariance_stderr[a, b])))
            rows.append(("expected", a, b, float(report.expected[a, b]), 0.0))
    _write_rows(ctx.file("clt.csv"), ["quantity", "i", "j", "value", "stderr"], rows)
    ctx.check("clt-marginals", report.max_distance <= 0.05, f"max distance {report.max_distance:.3g}")
    ctx.check("clt-covariance", report.covariance_z <= 3.0, f"max z {report.covariance_z:.3g}")


@experiment("srw-appendix", "simple random walk tables: Green growth, confinement, exit measure, clipped range")
def _srw(ctx: RunContext):
    d = ctx.cfg.d
    p = ctx.params
    growth = green_growth(d, p.green_sizes)
    _write_rows(ctx.file("green_growth.csv"), ["L", "green_diagonal", "log_L"], growth)
    box = Region.box(p.green_sizes[0], d)
    dominated = all(
        green_function(box, (0,) * d, x) <= green_function(box, x, x) + 1e-12
        for x in [tuple(k if i == 0 else 0 for i in range(d)) for k in range(p.green_sizes[0] + 1)]
    )
    ctx.check("green-domination", dominated)
    if d == 2 and len(growth) > 2:
        corr = float(np.corrcoef([g for _, g, _ in growth], [lg for _, _, lg in growth])[0, 1])
        ctx.summary["green_log_correlation"] = corr
        ctx.check("green-log-growth", corr >= 0.99, f"correlation {corr:.4f}")

    tails = [confinement_tail(Region.box(r, d), n=16 * r * r) for r in p.confinement_sizes]
    write_table(ctx.file("confinement.csv"),
                [(t.region, "scaled_rate", t.scaled_rate, 0.0) for t in tails])
    rates = [t.scaled_rate for t in tails]
    ctx.check("confinement-scaling", max(rates) <= 1.2 * min(rates), f"scaled rates {rates}")

    exits = [exit_distribution(Region.euclidean_ball(r, d), seed=ctx.config.seed) for r in p.exit_radii]
    write_table(ctx.file("exit.csv"), [(e.region, "min_max_ratio", e.ratio(), 0.0) for e in exits])
    ratios = [e.ratio() for e in exits]
    ctx.check("exit-ratio-bounded", min(ratios) >= 0.1 * ratios[0], f"ratios {ratios}")

    rows = []
    for N in p.range_sizes:
        mean, err = clipped_range_until_exit(N, d, seed=ctx.config.seed)
        scale = N ** 2 / math.log(N) if d == 2 else float(N ** 2)
        rows.append((N, mean, err, mean / scale))
    _write_rows(ctx.file("clipped_range.csv"), ["N", "mean", "stderr", "ratio_to_scale"], rows)
    ratios = [r[3] for r in rows]
    ctx.check("clipped-range-growth", max(ratios) <= 2 * min(ratios), f"ratios {ratios}")


@experiment("oracle-vs-sampler", "sampler estimates of X/n, |X|²/n and A_h^n against exact enumeration")
def _oracle_vs_sampler(ctx: RunContext):
    cfg = ctx.cfg
    cap = DEFAULT_CAPS.get(cfg.d, 7)
    too_long = [n for n in ctx.params.sizes if n > cap]
    if too_long:
        raise ConfigError(f"sizes {too_long} exceed the exact enumeration cap {cap}", "experiment.sizes")
    tol = ctx.params.tolerance
    sampler = ctx.config.sampler_config
    perm = replace(sampler, algorithm="rosenbluth-perm")
    rows = []
    for n in ctx.params.sizes:
        exact = canonical_moments(n, cfg)
        batch = sample_canonical(n, cfg, sampler)
        checks = [(f"x{k + 1}", exact.mean_x[k], estimate_observable(batch, lambda p, k=k: p.displacement[k] / n))
                  for k in range(cfg.d)]
        checks.append(("sq", exact.mean_sq, estimate_observable(batch, lambda p: sum(c * c for c in p.displacement) / n)))
        perm_batch = sample_canonical(n, cfg, perm)
        checks.append(("partition", math.exp(exact.log_partition), estimate_observable(perm_batch, lambda p: 1.0, normalized=False)))
        for name, value, est in checks:
            if est.stderr > 0:
                z = abs(est.value - value) / est.stderr
            else:
                z = 0.0 if math.isclose(est.value, value, rel_tol=1e-9, abs_tol=1e-12) else math.inf
            rows.append((n, name, float(value), est.value, est.stderr, z))
            ctx.check(f"n{n}-{name}", z <= tol, f"z={z:.3g}")
    _write_rows(ctx.file("oracle_vs_sampler.csv"), ["n", "observable", "exact", "estimate", "stderr", "z"], rows)


def run(config: ExperimentConfig) -> RunManifest:
    """
    Execute one named experiment into config.out.

    The manifest is written on success and on failure; artifacts produced
    before an exception stay in place and the manifest carries status "failed".
    """
    if config.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{config.experiment}'", "run.experiment")
    directory = FilePath(config.out)
    directory.mkdir(parents=True, exist_ok=True)
    save_config(config, directory / "config.ini")
    manifest = RunManifest(config.experiment, config_hash(config), config.seed, _timestamp(), directory=directory)
    ctx = RunContext(config, directory)
    fn, _ = EXPERIMENTS[config.experiment]
    logger.info("running %s into %s", config.experiment, directory)
    try:
        fn(ctx)
    except Exception as e:
        manifest.status = "failed"
        manifest.error = f"{type(e).__name__}: {e}"
        raise
    else:
        manifest.status = "passed" if all(ctx.assertions.values()) else "assertions-failed"
    finally:
        manifest.assertions = ctx.assertions
        if ctx.summary:
            with open(directory / "summary.json", "w") as f:
                json.dump(ctx.summary, f, indent=2, sort_keys=True)
        manifest.finished = _timestamp()
        manifest.save()
    return manifest


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------

def _table(directory: FilePath, name: str) -> List[dict]:
    source = directory / name
    if not source.exists():
        raise MissingTableError(name, directory)
    with open(source, newline="") as f:
        return list(csv.DictReader(f))


def _plot_xi(directory: FilePath):
    for row in _table(directory, "xi.csv"):
        angle = math.atan2(float(row.get("g_2", 0.0)), float(row["g_1"]))
        lo, hi = float(row["xi_lower"]), float(row["xi_upper"])
        yield "xi_lower", angle, lo, 0.0
        yield "xi_upper", angle, hi, 0.0
        yield "xi", angle, 0.5 * (lo + hi), 0.5 * (hi - lo)


def _plot_crossing(directory: FilePath):
    rows = _table(directory, "crossing_T.csv")
    summary_file = directory / "summary.json"
    target = math.nan
    if summary_file.exists():
        target = json.loads(summary_file.read_text()).get("target", {}).get("inverse_speed", math.nan)
    for row in rows:
        norm = float(row["norm"])
        yield "crossing", norm, float(row["T_over_norm"]), float(row["stderr"])
        yield "target", norm, target, 0.0


def _plot_velocity(directory: FilePath):
    for row in _table(directory, "velocity.csv"):
        yield "mean_abs_x_over_n", float(row["n"]), float(row["mean_abs_x_over_n"]), float(row["stderr"])


def _plot_normalization(directory: FilePath):
    for row in _table(directory, "normalization.csv"):
        yield "partial_sum", float(row["L"]), float(row["partial_sum"]), 0.0


def _plot_green(directory: FilePath):
    for row in _table(directory, "green_growth.csv"):
        yield "green_diagonal", float(row["log_L"]), float(row["green_diagonal"]), 0.0


def _plot_census(directory: FilePath):
    for row in _table(directory, "census.csv"):
        yield "surcharge", float(row["displacement"]), 0.5 * (float(row["surcharge_lo"]) + float(row["surcharge_hi"])), \
            0.5 * (float(row["surcharge_hi"]) - float(row["surcharge_lo"]))


PLOT_KINDS: Dict[str, Callable] = {
    "xi-map": _plot_xi,
    "crossing-T": _plot_crossing,
    "velocity": _plot_velocity,
    "normalization": _plot_normalization,
    "green-growth": _plot_green,
    "skeleton-census": _plot_census,
}


def emit_plotdata(manifest, kind: str, target=None) -> FilePath:
    """
    Tidy long-format CSV (series, x, y, yerr) from a finished run.

    Args:
        manifest: RunManifest or run directory
        kind: One of PLOT_KINDS
        target: Output file (default plot_<kind>.csv inside the run, added to the manifest)

    Raises:
        ValueError: If kind is unknown (the message lists the available kinds)
        MissingTableError: If the run lacks the table the kind needs
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"Unknown plot kind '{kind}', available: {', '.join(sorted(PLOT_KINDS))}")
    if not isinstance(manifest, RunManifest):
        manifest = load_manifest(manifest)
    directory = manifest.directory
    rows = list(PLOT_KINDS[kind](directory))
    inside = target is None
    target = FilePath(target) if target is not None else directory / f"plot_{kind}.csv"
    _write_rows(target, ["series", "x", "y", "yerr"], rows)
    if inside:
        manifest.save()
    return target


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog=TOOL_NAME, description="Self-attractive random walk experiments")
    parser.add_argument("experiment", nargs="?", help="Experiment name (see --list)")
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--out", help="Run directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a configuration value (section.key=value)")
    parser.add_argument("--plot", action="append", default=[], metavar="KIND",
                        help="Emit plot data after the run")
    parser.add_argument("--list", action="store_true", help="List experiments and exit")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.list:
        for name, (_, description) in EXPERIMENTS.items():
            print(f"  {name:<24} {description}")
        return 0
    if not args.experiment:
        parser.error("an experiment name is required (see --list)")

    overrides = list(args.set) + [f"run.experiment={args.experiment}"]
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out:
        overrides.append(f"run.out={args.out}")

    try:
        config = load_config(args.config, overrides)
        print(f"{TOOL_NAME} {config.experiment} (seed {config.seed})")
        print("=" * 60)
        manifest = run(config)
        for kind in args.plot:
            print(f"✓ Plot data written: {emit_plotdata(manifest, kind)}")
    except (ValueError, KeyError, RuntimeError, FileNotFoundError) as e:
        print(f"✗ ERROR: {e}")
        if args.verbose:
            traceback.print_exc()
        return 1

    for name, ok in manifest.assertions.items():
        print(f"{'✓' if ok else '✗'} {name}")
    print(f"✓ {len(manifest.files)} files written to {manifest.directory}/")
    print("=" * 60)
    print("SUCCESS" if manifest.passed else "FAILED")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
