"""
polymerlab simple random walk tests
Green functions, exit laws, confinement, ranges and tail bounds.
"""

import csv
import math
import shutil
import sys
import tempfile
import unittest
from pathlib import Path as FilePath

import numpy as np

sys.path.insert(0, str(FilePath(__file__).parent.parent / "src"))

from plab_core import EnsembleConfig, PotentialSpec
from plab_geometry import ScaledL1Metric
from plab_oracle import two_point_truncated
from plab_srw import (
    Region,
    clipped_range_until_exit,
    confinement_tail,
    exit_distribution,
    green_function,
    green_growth,
    range_statistics,
    shell_tail_bound,
    write_table,
)


class TestRegion(unittest.TestCase):
    """Finite lattice sets."""

    def test_shapes(self):
        self.assertEqual(len(Region.box(1)), 9)
        self.assertEqual(len(Region.l1_ball(2)), 5)
        self.assertEqual(len(Region.euclidean_ball(1.0, d=3)), 7)
        self.assertEqual(sorted(Region.xi_ball(2.0, ScaledL1Metric(2)).points), sorted(Region.l1_ball(2).points))

    def test_boundary_and_inradius(self):
        single = Region.from_points([(0, 0)])
        self.assertEqual(len(single.boundary), 4)
        self.assertEqual(single.inradius(), 1)
        self.assertEqual(Region.box(3).inradius(), 4)
        self.assertEqual(Region.box(1).interior(), [(0, 0)])

    def test_rejects_empty_and_mixed(self):
        with self.assertRaises(ValueError):
            Region.from_points([])
        with self.assertRaises(ValueError):
            Region.from_points([(0, 0), (1, 0, 0)])


class TestGreenFunction(unittest.TestCase):
    """Killed Green functions."""

    def test_single_site(self):
        for d in (1, 2, 3):
            region = Region.from_points([(0,) * d])
            self.assertAlmostEqual(green_function(region, (0,) * d, (0,) * d), 1.0)

    def test_three_sites_on_a_line(self):
        region = Region.from_points([(-1,), (0,), (1,)])
        self.assertAlmostEqual(green_function(region, (0,), (0,)), 2.0)
        self.assertAlmostEqual(green_function(region, (1,), (0,)), 1.0)

    def test_symmetric(self):
        region = Region.box(3)
        self.assertAlmostEqual(green_function(region, (1, 2), (-2, 0)),
                               green_function(region, (-2, 0), (1, 2)), places=8)

    def test_outside_raises(self):
        with self.assertRaises(ValueError):
            green_function(Region.box(1), (0, 0), (5, 5))

    def test_growth_in_two_dimensions(self):
        rows = green_growth(2, (4, 8, 16))
        values = [g for _, g, _ in rows]
        self.assertTrue(all(a < b for a, b in zip(values, values[1:])))
        self.assertAlmostEqual(rows[1][2], math.log(8))
        # G grows like (2/π) log L
        slope = (values[2] - values[1]) / (rows[2][2] - rows[1][2])
        self.assertAlmostEqual(slope, 2 / math.pi, delta=0.1)


class TestExitDistribution(unittest.TestCase):
    """Harmonic measure."""

    def test_single_site_is_uniform(self):
        dist = exit_distribution(Region.from_points([(0, 0)]), mode="exact")
        self.assertEqual(len(dist.probabilities), 4)
        for p in dist.probabilities.values():
            self.assertAlmostEqual(p, 0.25)
        self.assertAlmostEqual(dist.ratio(), 1.0)

    def test_exact_sums_to_one_and_is_symmetric(self):
        dist = exit_distribution(Region.box(3), mode="exact")
        self.assertAlmostEqual(sum(dist.probabilities.values()), 1.0, places=8)
        self.assertAlmostEqual(dist.probabilities[(4, 1)], dist.probabilities[(-1, -4)], places=8)
        self.assertGreater(dist.ratio(), 0.0)

    def test_monte_carlo_agrees_with_exact(self):
        region = Region.box(2)
        exact = exit_distribution(region, mode="exact")
        mc = exit_distribution(region, mode="monte-carlo", walks=20_000, seed=3)
        self.assertEqual(mc.walks, 20_000)
        for z, p in exact.probabilities.items():
            self.assertLess(abs(mc.probabilities[z] - p), 5 * mc.stderr[z] + 0.005)

    def test_bad_arguments(self):
        with self.assertRaises(ValueError):
            exit_distribution(Region.box(1), start=(7, 7))
        with self.assertRaises(ValueError):
            exit_distribution(Region.box(1), mode="guess")


class TestConfinement(unittest.TestCase):
    """Survival inside a region."""

    def test_three_site_line_closed_form(self):
        region = Region.from_points([(-1,), (0,), (1,)])
        tail = confinement_tail(region, n=40)
        self.assertAlmostEqual(tail.probability / 2.0 ** -20, 1.0, places=8)
        self.assertAlmostEqual(tail.fitted_rate, math.log(2) / 2, places=8)
        self.assertEqual(tail.inradius, 2)

    def test_scaled_rate_stabilises(self):
        small = confinement_tail(Region.box(5), n=400)
        large = confinement_tail(Region.box(10), n=1600)
        self.assertGreater(small.scaled_rate, 0.0)
        self.assertLess(abs(small.scaled_rate - large.scaled_rate) / large.scaled_rate, 0.3)

    def test_bad_arguments(self):
        with self.assertRaises(ValueError):
            confinement_tail(Region.box(1), n=-1)
        with self.assertRaises(ValueError):
            confinement_tail(Region.box(1), start=(3, 0), n=4)


class TestRange(unittest.TestCase):
    """Range of the free walk."""

    def test_small_exact_values(self):
        self.assertEqual(range_statistics(0).mean, 1.0)
        self.assertAlmostEqual(range_statistics(1).mean, 2.0)
        self.assertAlmostEqual(range_statistics(2).mean, 11 / 4)

    def test_clip_to_origin(self):
        stats_ = range_statistics(4, clip=Region.from_points([(0, 0)]))
        self.assertAlmostEqual(stats_.clipped_mean, 1.0)
        self.assertEqual(stats_.mode, "exact")

    def test_monte_carlo_agrees_with_exact(self):
        exact = range_statistics(5, mode="exact")
        mc = range_statistics(5, mode="monte-carlo", reps=20_000, seed=1)
        self.assertLess(abs(mc.mean - exact.mean), 5 * mc.stderr + 1e-9)

    def test_clipped_range_until_exit_grows(self):
        small, small_err = clipped_range_until_exit(2, reps=100, seed=0)
        large, _ = clipped_range_until_exit(4, reps=100, seed=0)
        self.assertGreaterEqual(small, 1.0)
        self.assertLessEqual(small, 25.0)
        self.assertGreaterEqual(small_err, 0.0)
        self.assertGreater(large, small)


class TestTailBound(unittest.TestCase):
    """Shell bound on long crossings."""

    def test_decreasing_in_length(self):
        self.assertGreater(shell_tail_bound((1, 0), 6, 1.0, 2), shell_tail_bound((1, 0), 12, 1.0, 2))
        self.assertEqual(shell_tail_bound((1, 0), 6, 0.0, 2), math.inf)

    def test_dominates_enumerated_tail(self):
        cfg = EnsembleConfig(d=2, potential=PotentialSpec.sausage(1.2))
        short = two_point_truncated((1, 0), 5, cfg)
        longer = two_point_truncated((1, 0), 9, cfg)
        self.assertLessEqual(longer.value - short.value, shell_tail_bound((1, 0), 5, 1.2, 2))


class TestTables(unittest.TestCase):
    """CSV output."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_write_table(self):
        target = write_table(FilePath(self.test_dir) / "green.csv",
                             [("box(r=4,d=2)", "green", 1.5, 0.0), ("disc(r=8,d=2)", "exit-ratio", 0.4, 0.01)])
        with open(target, newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([r["quantity"] for r in rows], ["green", "exit-ratio"])
        self.assertAlmostEqual(float(rows[1]["error"]), 0.01)


def run_tests():
    """Run all tests."""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for case in (TestRegion, TestGreenFunction, TestExitDistribution, TestConfinement, TestRange,
                 TestTailBound, TestTables):
        suite.addTests(loader.loadTestsFromTestCase(case))
    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite).wasSuccessful()


if __name__ == "__main__":
    sys.exit(0 if run_tests() else 1)
