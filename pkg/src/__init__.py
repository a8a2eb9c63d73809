"""
polymerlab v1.0
Self-attractive random walks: exact weights, samplers, geometry and renewal structure.

Modules:
    plab_core: Paths, local times, potentials, weights, random streams
    plab_oracle: Exact enumeration of partition functions and two-point sums
    plab_srw: Simple random walk Green functions, exit laws, confinement, range
    plab_geometry: ξ brackets, the critical shape, conjugate drifts, cones
    plab_skeleton: Trunks, hairs, dirty boxes and surcharges at scale K
    plab_sampler: Metropolis regeneration and PERM samplers
    plab_renewal: Cone points, irreducible pieces and renewal statistics
    plab_experiments: Configured experiment runs, manifests, command line
"""

__version__ = "1.0.0"
__author__ = "polymerlab Contributors"

from .plab_core import EnsembleConfig, Path, PotentialSpec, weight
from .plab_oracle import canonical_partition, two_point_truncated
from .plab_experiments import load_config, run

__all__ = [
    'EnsembleConfig',
    'Path',
    'PotentialSpec',
    'weight',
    'canonical_partition',
    'two_point_truncated',
    'load_config',
    'run',
    '__version__'
]
