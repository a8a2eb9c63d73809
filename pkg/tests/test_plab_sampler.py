"""
polymerlab sampler tests
Bridges, proposal algebra, batches, and both algorithms against the exact oracle.
"""

import math
import shutil
import sys
import tempfile
import unittest
from pathlib import Path as FilePath

import numpy as np
from hypothesis import given, settings, strategies as st

sys.path.insert(0, str(FilePath(__file__).parent.parent / "src"))

from plab_core import EnsembleConfig, Path, PotentialSpec, stream
from plab_oracle import canonical_moments, canonical_partition, crossing_length_moments
from plab_sampler import (
    SampleBatch,
    SamplerConfig,
    SamplerFailure,
    bridge_count,
    estimate_observable,
    hastings_log_ratio,
    integrated_autocorrelation_time,
    sample_bridge,
    sample_canonical,
    sample_crossing,
)

CFG = EnsembleConfig(d=2, potential=PotentialSpec.sausage(0.5), h=(0.5, 0.0))


class TestBridges(unittest.TestCase):
    """Uniform bridges of the simple random walk."""

    def test_counts(self):
        self.assertEqual(bridge_count((0, 0), 0), 1)
        self.assertEqual(bridge_count((0, 0), 2), 4)
        self.assertEqual(bridge_count((1, 1), 2), 2)
        self.assertEqual(bridge_count((1, 0), 3), 9)
        self.assertEqual(bridge_count((1, 0), 2), 0)
        self.assertEqual(bridge_count((-2, 1), 3), bridge_count((1, 2), 3))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 6), st.integers(0, 1000))
    def test_bridge_reaches_target(self, a, b, extra, seed):
        m = abs(a) + abs(b) + 2 * extra
        if m == 0:
            return
        steps = sample_bridge((a, b), m, stream(seed, "test.bridge"))
        self.assertEqual(len(steps), m)
        self.assertEqual(Path((0, 0), tuple(steps)).endpoint, (a, b))

    def test_long_bridge_uses_sequential_sampling(self):
        steps = sample_bridge((3, -1), 24, stream(0, "test.bridge"))
        self.assertEqual(Path((0, 0), tuple(steps)).endpoint, (3, -1))

    def test_impossible_bridge(self):
        with self.assertRaises(ValueError):
            sample_bridge((2, 0), 3, stream(0, "test.bridge"))

    def test_short_bridge_is_uniform(self):
        rng = stream(5, "test.bridge")
        seen = {}
        for _ in range(4000):
            key = tuple(sample_bridge((1, 1), 2, rng))
            seen[key] = seen.get(key, 0) + 1
        self.assertEqual(set(seen), {(1, 2), (2, 1)})
        self.assertLess(abs(seen[(1, 2)] - 2000), 200)


class TestProposalAlgebra(unittest.TestCase):
    """Hastings factors of the regeneration move."""

    def test_same_length_move_is_symmetric(self):
        self.assertEqual(hastings_log_ratio(10, 2, 4, 4, 8, (2, 0), 2, crossing=True, tail=False), 0.0)
        self.assertEqual(hastings_log_ratio(10, 6, 4, 4, 8, (1, 1), 2, crossing=False, tail=True), 0.0)

    def test_forward_and_reverse_cancel(self):
        forward = hastings_log_ratio(10, 2, 4, 6, 8, (2, 0), 2, crossing=True, tail=False)
        reverse = hastings_log_ratio(12, 2, 6, 4, 8, (2, 0), 2, crossing=True, tail=False)
        self.assertAlmostEqual(forward + reverse, 0.0)


class TestSamplerConfig(unittest.TestCase):
    """Configuration validation."""

    def test_rejects_bad_values(self):
        for kwargs in ({"algorithm": "gibbs"}, {"chains": 0}, {"prune": 3.0}, {"mixture_rate": 1.0},
                       {"crossing_route": "teleport"}, {"burn_in": -1}):
            with self.assertRaises(ValueError):
                SamplerConfig(**kwargs)


class TestBatches(unittest.TestCase):
    """Batch bookkeeping and persistence."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.s = SamplerConfig(chains=2, steps=200, burn_in=50, thin=10, seed=3)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_canonical_batch_shape(self):
        batch = sample_canonical(5, CFG, self.s)
        self.assertEqual(len(batch), 2 * 20)
        self.assertTrue(all(p.length == 5 and p.start == (0, 0) for p in batch.paths))
        self.assertAlmostEqual(batch.kish_ess, len(batch))
        self.assertGreater(batch.ess, 0.0)
        self.assertLessEqual(batch.ess, len(batch) + 1e-9)
        self.assertEqual(len(batch.diagnostics), 2)

    def test_ess_counts_autocorrelation(self):
        forward, backward = Path((0, 0), (1,) * 4), Path((0, 0), (-1,) * 4)

        def chain(paths):
            return SampleBatch("canonical", 4, paths, np.zeros(len(paths)), np.zeros(len(paths), dtype=np.int64),
                               1, "metropolis-regenerate")

        sticky = chain([forward] * 20 + [backward] * 20)
        self.assertAlmostEqual(sticky.kish_ess, 40.0)
        self.assertLess(sticky.ess, 10.0)
        alternating = chain([forward, backward] * 20)
        self.assertAlmostEqual(alternating.ess, 40.0)
        perm = SampleBatch("canonical", 4, sticky.paths, sticky.log_weights, np.arange(40), 40, "rosenbluth-perm")
        self.assertAlmostEqual(perm.ess, 40.0)

    def test_autocorrelation_time(self):
        self.assertEqual(integrated_autocorrelation_time([1.0] * 50), 1.0)
        self.assertEqual(integrated_autocorrelation_time([0.0, 1.0] * 3), 1.0)
        ramp = np.repeat(np.arange(4.0), 25)
        self.assertGreater(integrated_autocorrelation_time(ramp), 10.0)

    def test_reproducible(self):
        a = sample_canonical(5, CFG, self.s)
        b = sample_canonical(5, CFG, self.s)
        self.assertEqual(a.paths, b.paths)

    def test_write_read(self):
        batch = sample_canonical(4, CFG, SamplerConfig("rosenbluth-perm", chains=1, steps=20, seed=1))
        batch.write(self.test_dir, stem="perm")
        loaded = SampleBatch.read(self.test_dir, stem="perm")
        self.assertEqual(loaded.paths, batch.paths)
        np.testing.assert_allclose(loaded.log_weights, batch.log_weights)
        self.assertEqual(loaded.group_count, batch.group_count)
        with self.assertRaises(FileNotFoundError):
            SampleBatch.read(self.test_dir, stem="absent")

    def test_merge(self):
        a = sample_canonical(5, CFG, self.s)
        b = sample_canonical(5, CFG, SamplerConfig(chains=2, steps=200, burn_in=50, thin=10, seed=4))
        merged = a.merge(b)
        self.assertEqual(len(merged), len(a) + len(b))
        self.assertEqual(merged.group_count, 4)
        self.assertEqual(int(merged.groups.max()), 3)
        other = sample_canonical(6, CFG, self.s)
        with self.assertRaises(ValueError):
            a.merge(other)

    def test_estimate_guards(self):
        batch = sample_canonical(5, CFG, self.s)
        constant = estimate_observable(batch, lambda p: 5.0)
        self.assertEqual(tuple(constant), (5.0, 0.0))
        with self.assertRaises(ValueError):
            estimate_observable(batch, lambda p: 1.0, normalized=False)
        tiny = SampleBatch("canonical", 5, batch.paths[:1], np.zeros(1), np.zeros(1, dtype=np.int64), 1,
                           batch.algorithm)
        with self.assertRaises(ValueError):
            estimate_observable(tiny, lambda p: 1.0)


class TestArguments(unittest.TestCase):
    """Entry point validation."""

    def test_canonical_length(self):
        with self.assertRaises(ValueError):
            sample_canonical(0, CFG)

    def test_crossing_targets(self):
        with self.assertRaises(ValueError):
            sample_crossing((0, 0), CFG)
        with self.assertRaises(ValueError):
            sample_crossing((1, 0, 0), CFG)
        with self.assertRaises(SamplerFailure) as ctx:
            sample_crossing((30, 30), CFG, SamplerConfig(max_length=20))
        self.assertEqual(ctx.exception.trace["distance"], 60)


class TestAgainstOracle(unittest.TestCase):
    """Sampler estimates agree with exact enumeration."""

    def assertAgrees(self, estimate, exact, slack):
        self.assertLess(abs(estimate.value - exact), 5 * estimate.stderr + slack,
                        f"{estimate.value} ± {estimate.stderr} vs exact {exact}")

    def test_metropolis_canonical(self):
        n = 6
        exact = canonical_moments(n, CFG)
        s = SamplerConfig(chains=4, steps=4000, burn_in=500, thin=5, seed=11)
        batch = sample_canonical(n, CFG, s)
        self.assertAgrees(estimate_observable(batch, lambda p: p.displacement[0] / n), exact.mean_x[0], 0.02)
        self.assertAgrees(estimate_observable(batch, lambda p: sum(c * c for c in p.displacement) / n),
                          exact.mean_sq, 0.1)

    def test_perm_partition_function(self):
        n = 6
        exact = math.exp(canonical_partition(n, CFG).log_total)
        s = SamplerConfig("rosenbluth-perm", chains=2, steps=300, seed=5)
        batch = sample_canonical(n, CFG, s)
        estimate = estimate_observable(batch, lambda p: 1.0, normalized=False)
        self.assertAgrees(estimate, exact, 0.05 * exact)
        mean_x = estimate_observable(batch, lambda p: p.displacement[0] / n)
        self.assertAgrees(mean_x, canonical_moments(n, CFG).mean_x[0], 0.03)

    def test_metropolis_crossing_lengths(self):
        x, L = (2, 0), 8
        mean_t, _ = crossing_length_moments(x, L, CFG)
        s = SamplerConfig(chains=4, steps=4000, burn_in=500, thin=5, seed=2, max_length=L)
        batch = sample_crossing(x, CFG, s)
        self.assertTrue(all(p.endpoint == x and p.length <= L for p in batch.paths))
        self.assertAgrees(estimate_observable(batch, lambda p: float(p.length)), mean_t, 0.1)

    def test_mixture_crossing_lengths(self):
        x, L = (2, 0), 6
        mean_t, _ = crossing_length_moments(x, L, CFG)
        s = SamplerConfig(chains=2, steps=400, seed=9, max_length=L, crossing_route="mixture")
        batch = sample_crossing(x, CFG, s)
        self.assertEqual(batch.algorithm, "rosenbluth-perm")
        self.assertAgrees(estimate_observable(batch, lambda p: float(p.length)), mean_t, 0.15)


def run_tests():
    """Run all tests."""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for case in (TestBridges, TestProposalAlgebra, TestSamplerConfig, TestBatches, TestArguments,
                 TestAgainstOracle):
        suite.addTests(loader.loadTestsFromTestCase(case))
    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite).wasSuccessful()


if __name__ == "__main__":
    sys.exit(0 if run_tests() else 1)
