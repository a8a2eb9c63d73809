#!/usr/bin/env python3
"""
polymerlab Demo
Walks through exact weights, sampling, cone-point renewal and the experiment runner.
"""

import sys
import tempfile
from pathlib import Path as FilePath

# Add src to path
project_root = FilePath(__file__).parent
sys.path.insert(0, str(project_root / "src"))

from plab_core import EnsembleConfig, Path, PotentialSpec
from plab_experiments import load_config, run
from plab_geometry import ConeSpec, ScaledL1Metric
from plab_oracle import canonical_moments, two_point_truncated
from plab_renewal import decompose, find_cone_points, irreducible_census
from plab_sampler import SamplerConfig, estimate_observable, sample_canonical
from plab_srw import Region, exit_distribution


def print_header(text):
    """Print formatted header."""
    print("\n" + "=" * 70)
    print(f"  {text}")
    print("=" * 70)


def demo_exact_and_sampled(cfg):
    """Exact 𝔸_h^n moments next to a Metropolis estimate."""
    print_header("DEMO: Exact enumeration vs sampler")
    n = 8
    exact = canonical_moments(n, cfg)
    print(f"\n1. Exact over all {4 ** n} paths of length {n}")
    print(f"   - log A_h^n = {exact.log_partition:.6f}")
    print(f"   - E[X_1/n]  = {exact.mean_x[0]:.6f}")
    print(f"   - E[|X|²/n] = {exact.mean_sq:.6f}")

    print("\n2. Metropolis regeneration sampler")
    batch = sample_canonical(n, cfg, SamplerConfig(chains=4, steps=4000, burn_in=500, seed=1))
    est = estimate_observable(batch, lambda p: p.displacement[0] / n)
    print(f"   - E[X_1/n] ≈ {est.value:.4f} ± {est.stderr:.4f} ({len(batch)} samples)")

    two_point = two_point_truncated((3, 0), 9, cfg)
    print(f"\n3. Two-point sum G((3,0)) truncated at L=9: {two_point.value:.6g}")
    return True


def demo_renewal(cfg):
    """Cone points of a path and the irreducible piece census."""
    print_header("DEMO: Cone points and renewal pieces")
    cone = ConeSpec((1.0, 0.0), ScaledL1Metric(2), nu=0.25, nu_tilde=0.6)
    path = Path((0, 0), (1, 1, 2, 1, 1, -2, 1, 1))
    report = find_cone_points(path, cone)
    print(f"\n   Path {path.steps}")
    print(f"   - cone points at {report.indices}")
    if report.count >= 2:
        dec = decompose(path, cone, cfg)
        print(f"   - {len(dec.middle)} middle pieces, lengths {[p.T for p in dec.middle]}")
        print(f"   - weight factorisation error {dec.factorization_error(cfg):.2e}")

    stats = irreducible_census(cone, cfg, 6)
    print(f"\n   Irreducible census up to length 6: {stats.pieces} pieces")
    print(f"   - velocity v = {stats.velocity.round(4).tolist()}")
    print(f"   - normalisation ≈ {stats.extrapolated_total:.4f}")
    return True


def demo_random_walk():
    """Harmonic measure of a small box."""
    print_header("DEMO: Simple random walk exit law")
    dist = exit_distribution(Region.box(3), mode="exact")
    print(f"\n   {len(dist.probabilities)} boundary sites, min/max ratio {dist.ratio():.4f}")
    return True


def demo_experiment():
    """One configured run with its manifest."""
    print_header("DEMO: Experiment runner")
    out = FilePath(tempfile.mkdtemp()) / "srw"
    config = load_config(None, [
        "experiment=srw-appendix", f"out={out}",
        "experiment.green_sizes=4,8,16", "experiment.confinement_sizes=3,5",
        "experiment.exit_radii=3,4", "experiment.range_sizes=3,4",
    ])
    manifest = run(config)
    for name, ok in manifest.assertions.items():
        print(f"   {'✓' if ok else '✗'} {name}")
    print(f"\n   {len(manifest.files)} files in {out}/, status {manifest.status}")
    return manifest.status != "failed"


def main():
    """Run complete demo."""
    print_header("polymerlab v1.0 - Demonstration")
    cfg = EnsembleConfig(d=2, potential=PotentialSpec.sausage(0.8), h=(1.0, 0.0))

    try:
        for step in (lambda: demo_exact_and_sampled(cfg), lambda: demo_renewal(cfg), demo_random_walk,
                     demo_experiment):
            if not step():
                return 1

        print_header("Demo Complete")
        print("\nNext steps:")
        print("  - Review README.md for the experiment list and configuration keys")
        print("  - Run 'python3 polymerlab.py --list'")
        print("  - Run the tests: python3 -m pytest tests/")
        return 0

    except Exception as e:
        print(f"\n✗ Error during demo: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
