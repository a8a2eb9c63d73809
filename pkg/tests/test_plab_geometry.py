"""
polymerlab geometry tests
ξ brackets, the critical shape, conjugate drifts and cones.
"""

import json
import math
import shutil
import sys
import tempfile
import unittest
from pathlib import Path as FilePath

import numpy as np
from hypothesis import given, settings, strategies as st

sys.path.insert(0, str(FilePath(__file__).parent.parent / "src"))

from plab_core import EnsembleConfig, PotentialSpec
from plab_geometry import (
    BracketInconsistency,
    ConeSpec,
    CriticalShape,
    DriftOutsideK,
    ScaledL1Metric,
    XiCaps,
    XiEstimate,
    check_separation,
    direction_grid,
    estimate_xi,
    surcharge,
)


def round_metric():
    """Polygonal stand-in for a strictly convex ξ: brackets ±5% around the Euclidean norm."""
    vectors = direction_grid(2)
    return XiEstimate(vectors, [0.95] * len(vectors), [1.05] * len(vectors))


class TestDirections(unittest.TestCase):
    """Lattice direction grids."""

    def test_default_grids(self):
        grid = direction_grid(2)
        self.assertEqual(len(grid), 16)
        self.assertEqual(grid[0], (1, 0))
        self.assertEqual(len(direction_grid(3)), 18)
        self.assertEqual(direction_grid(1), [(-1,), (1,)])

    def test_primitive_only(self):
        self.assertNotIn((2, 0), direction_grid(2, max_l1=4))
        self.assertIn((3, 1), direction_grid(2, max_l1=4))


class TestXiEstimate(unittest.TestCase):
    """Bracketed ξ from lattice directions."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_inconsistent_brackets(self):
        with self.assertRaises(BracketInconsistency):
            XiEstimate([(1, 0), (0, 1), (-1, 0), (0, -1)], [1.0, 1.0, 2.0, 1.0], [1.5, 1.5, 1.5, 1.5])

    def test_homogeneous(self):
        metric = round_metric()
        self.assertAlmostEqual(metric((3, 4)), 5 * metric((0.6, 0.8)))
        self.assertAlmostEqual(metric((1, 0)), 1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_brackets_enclose_midpoint(self, a, b):
        metric = round_metric()
        lo, hi = metric.bracket((a, b))
        self.assertLessEqual(lo, metric((a, b)) + 1e-9)
        self.assertLessEqual(metric((a, b)), hi + 1e-9)

    def test_csv_round_trip(self):
        metric = round_metric()
        target = metric.save_csv(FilePath(self.test_dir) / "xi.csv")
        header = target.read_text().splitlines()[0].split(",")
        self.assertEqual(header, ["g_1", "g_2", "v_1", "v_2", "xi_lower", "xi_upper"])
        loaded = XiEstimate.load_csv(target)
        np.testing.assert_allclose(loaded.lower, metric.lower)
        np.testing.assert_allclose(loaded.upper, metric.upper)
        with self.assertRaises(FileNotFoundError):
            XiEstimate.load_csv(FilePath(self.test_dir) / "absent.csv")

    def test_estimate_from_enumeration(self):
        beta = 1.0
        cfg = EnsembleConfig(d=2, potential=PotentialSpec.sausage(beta))
        directions = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]
        estimate = estimate_xi(directions, cfg, XiCaps(max_norm=4, slack=2, max_length=8))
        self.assertTrue(np.all(estimate.lower <= estimate.upper + 1e-9))
        self.assertTrue(np.all(estimate.upper > 0))
        # straight paths give A(n e1) >= exp(-n(β + log 4))
        self.assertLessEqual(estimate.upper[0], beta + math.log(4) + 1e-9)
        self.assertAlmostEqual(estimate.upper[0], estimate.upper[2], places=9)
        self.assertAlmostEqual(estimate.upper[1], estimate.upper[5], places=9)
        self.assertEqual(len(estimate.metadata["per_direction"]), len(directions))

    def test_free_walk_rejected(self):
        with self.assertRaises(ValueError):
            estimate_xi(None, EnsembleConfig(potential=PotentialSpec.sausage(0.0)))

    def test_caps_validation(self):
        with self.assertRaises(ValueError):
            XiCaps(max_norm=10, slack=10, max_length=16)
        with self.assertRaises(ValueError):
            XiCaps(max_norm=1)


class TestCriticalShape(unittest.TestCase):
    """∂U and its polar K."""

    def test_l1_conjugate_drift(self):
        shape = CriticalShape(ScaledL1Metric(2))
        corner = shape.conjugate_drift((2, 1))
        np.testing.assert_allclose(corner.h, [1.0, 1.0], atol=1e-6)
        self.assertAlmostEqual(corner.gap, 0.0, places=6)
        axis = shape.conjugate_drift((1, 0))
        self.assertTrue(axis.degenerate)
        np.testing.assert_allclose(axis.h, [1.0, 0.0], atol=1e-6)
        with self.assertRaises(ValueError):
            shape.conjugate_drift((0, 0))

    def test_too_few_directions(self):
        vectors = direction_grid(2, max_l1=2)
        self.assertEqual(len(vectors), 8)
        coarse = XiEstimate(vectors, [0.95] * 8, [1.05] * 8)
        with self.assertRaises(ValueError) as ctx:
            CriticalShape(coarse)
        self.assertIn("16", str(ctx.exception))
        self.assertEqual(len(round_metric().boundary_samples()), 16)

    def test_polarity(self):
        self.assertLessEqual(CriticalShape(ScaledL1Metric(2)).polarity_violation(), 1e-9)
        self.assertLessEqual(CriticalShape(round_metric()).polarity_violation(), 1e-9)

    def test_convexity_margin(self):
        self.assertAlmostEqual(CriticalShape(ScaledL1Metric(2)).strict_convexity_margin(), 0.0, places=9)
        self.assertGreater(CriticalShape(round_metric()).strict_convexity_margin(min_angle_deg=30.0), 0.0)

    def test_conjugate_drift_on_boundary_of_k(self):
        metric = round_metric()
        shape = CriticalShape(metric)
        for g in ((1, 0), (2, 1), (-1, 3)):
            drift = shape.conjugate_drift(g)
            self.assertAlmostEqual(metric.dual_norm(drift.h), 1.0, places=6)
            self.assertGreaterEqual(drift.gap, -1e-9)

    def test_write_csv(self):
        test_dir = tempfile.mkdtemp()
        try:
            target = CriticalShape(ScaledL1Metric(2)).write_csv(FilePath(test_dir) / "shape.csv")
            lines = target.read_text().splitlines()
            self.assertEqual(lines[0], "x_1,x_2,h_1,h_2,gap")
            self.assertGreater(len(lines), 4)
        finally:
            shutil.rmtree(test_dir)


class TestCones(unittest.TestCase):
    """Y_h and Ỹ_h."""

    def setUp(self):
        self.metric = ScaledL1Metric(2)
        self.cone = ConeSpec((1.0, 0.0), self.metric, nu=0.25, nu_tilde=0.6)

    def test_membership(self):
        self.assertTrue(self.cone.membership((4, 1)).member)
        self.assertFalse(self.cone.membership((1, 1)).member)
        self.assertTrue(self.cone.membership((1, 1), tilde=True).member)
        self.assertFalse(self.cone.membership((-1, 0), tilde=True).member)
        self.assertFalse(self.cone.membership((4, 1)).indeterminate)

    def test_conservative_many_matches_exact_metric(self):
        points = np.array([(4, 1), (1, 1), (0, 3), (-2, 1), (5, -2)])
        expected = [self.cone.membership(p, tilde=True).member for p in points]
        self.assertEqual(list(self.cone.conservative_many(points)), expected)

    def test_conservative_is_stricter(self):
        cone = ConeSpec((1.0, 0.0), round_metric(), nu=0.25, nu_tilde=0.6)
        for p in ((4, 1), (3, 2), (2, 2), (5, -3)):
            m = cone.membership(p, tilde=True)
            if m.conservative:
                self.assertTrue(m.member)

    def test_designated_direction(self):
        self.assertEqual(self.cone.designated_direction(), (1, 0))

    def test_bad_parameters(self):
        with self.assertRaises(ValueError):
            ConeSpec((1.0, 0.0), self.metric, nu=0.7, nu_tilde=0.6)
        with self.assertRaises(ValueError):
            ConeSpec((0.0, 0.0), self.metric)
        with self.assertRaises(ValueError):
            ConeSpec((1.0, 0.0, 0.0), self.metric)

    def test_json_round_trip(self):
        test_dir = tempfile.mkdtemp()
        try:
            target = self.cone.save(FilePath(test_dir) / "cone.json")
            with open(target) as f:
                data = json.load(f)
            restored = ConeSpec.from_json(data, self.metric)
            np.testing.assert_allclose(restored.h, self.cone.h)
            self.assertEqual(restored.nu_tilde, 0.6)
        finally:
            shutil.rmtree(test_dir)

    def test_surcharge(self):
        lo, hi = surcharge((3, 1), (1.0, 0.0), self.metric)
        self.assertAlmostEqual(lo, 1.0)
        self.assertAlmostEqual(hi, 1.0)
        with self.assertRaises(DriftOutsideK) as ctx:
            surcharge((3, 1), (1.5, 0.0), self.metric)
        self.assertAlmostEqual(ctx.exception.dual_norm, 1.5)

    def test_separation(self):
        report = check_separation(self.cone, kappa=0.4)
        self.assertTrue(report.ok, report.witness)
        self.assertAlmostEqual(report.c_bar, 1.0, places=6)
        self.assertFalse(check_separation(self.cone, kappa=0.0).ok)
        with self.assertRaises(ValueError):
            check_separation(self.cone, kappa=-1.0)

    def test_wide_cone_fails_aperture(self):
        wide = ConeSpec((1.0, 0.0), self.metric, nu=0.25, nu_tilde=1.0)
        report = check_separation(wide, kappa=0.4)
        self.assertFalse(report.aperture_ok)
        self.assertEqual(report.witness["check"], "aperture")


def run_tests():
    """Run all tests."""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for case in (TestDirections, TestXiEstimate, TestCriticalShape, TestCones):
        suite.addTests(loader.loadTestsFromTestCase(case))
    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite).wasSuccessful()


if __name__ == "__main__":
    sys.exit(0 if run_tests() else 1)
