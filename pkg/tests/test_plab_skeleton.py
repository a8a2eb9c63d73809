"""
polymerlab coarse-graining tests
Trunks, hairs, dirty boxes, energy splitting and the skeleton census.
"""

import csv
import json
import shutil
import sys
import tempfile
import unittest
from pathlib import Path as FilePath
from types import SimpleNamespace

import numpy as np
from hypothesis import given, settings, strategies as st

sys.path.insert(0, str(FilePath(__file__).parent.parent / "src"))

from plab_core import Path, PotentialSpec
from plab_geometry import ConeSpec, ScaledL1Metric
from plab_skeleton import (
    DecoratedSkeleton,
    SkeletonConstants,
    box_index,
    box_sites,
    build_trunk,
    check_skeleton,
    covering_radius,
    decorate,
    energy_split_gap,
    mark_dirty_boxes,
    reassemble,
    skeleton_census,
    skeleton_cone_points,
    skeleton_surcharge,
    slab_count,
)

METRIC = ScaledL1Metric(2)


def out_and_back():
    """0 → 6e1 → 0 → −6e1."""
    return Path((0, 0), (1,) * 6 + (-1,) * 12)


class TestTrunk(unittest.TestCase):
    """Trunk construction at scale K."""

    def test_straight_path(self):
        trunk = build_trunk(Path.straight(2, 1, 10), 3, METRIC)
        self.assertEqual(trunk.vertices, [(0, 0), (3, 0), (6, 0), (9, 0)])
        self.assertEqual(trunk.sigma, [3, 6, 9, 10])
        self.assertEqual(trunk.tau, [0, 3, 6, 9])
        gammas, etas = trunk.pieces(Path.straight(2, 1, 10))
        self.assertTrue(all(eta.length == 0 for eta in etas))
        self.assertEqual(reassemble(gammas, etas), Path.straight(2, 1, 10))

    def test_out_and_back(self):
        trunk = build_trunk(out_and_back(), 3, METRIC)
        # −6e1 sits at ξ-distance exactly 3 from −3e1, outside the open ball
        self.assertEqual(trunk.vertices, [(0, 0), (-3, 0), (-6, 0)])
        self.assertEqual(trunk.sigma, [3, 18, 18])
        self.assertEqual(trunk.tau, [0, 15, 18])
        self.assertFalse(trunk.closed)

    def test_return_to_start_closes_trunk(self):
        path = Path((0, 0), (1,) * 6 + (-1,) * 6)
        trunk = build_trunk(path, 5, METRIC)
        self.assertEqual(len(trunk.vertices), 2)
        self.assertEqual(trunk.sigma, [5, 12])
        self.assertEqual(trunk.tau, [0, 12])
        self.assertEqual(trunk.vertices[1], (0, 0))
        self.assertTrue(trunk.closed)
        gammas, etas = trunk.pieces(path)
        self.assertEqual(etas[0].length, 7)
        self.assertEqual(reassemble(gammas, etas), path)

    def test_closed_skeleton_passes_checks(self):
        path = Path((0, 0), (1,) * 6 + (-1,) * 6)
        skel = decorate(path, 5, METRIC)
        self.assertTrue(skel.closed)
        self.assertEqual(skel.open_trunk, [(0, 0)])
        checks = check_skeleton(path, skel, METRIC)
        self.assertTrue(checks.ok)
        self.assertGreaterEqual(energy_split_gap(path, skel, PotentialSpec.sausage(1.0), METRIC, 4.0), 0.0)

    def test_path_inside_first_ball(self):
        trunk = build_trunk(Path((0, 0), (1, -1, 2)), 3, METRIC)
        self.assertEqual(trunk.vertices, [(0, 0)])
        self.assertEqual(trunk.sigma, [3])

    def test_scale_floor(self):
        with self.assertRaises(ValueError):
            build_trunk(Path.straight(2, 1, 10), 2, METRIC)


class TestDecoration(unittest.TestCase):
    """Pre-hairs, dirty boxes and hairs."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_prehair_reads_eta_backwards(self):
        skel = decorate(out_and_back(), 3, METRIC)
        self.assertEqual(skel.prehairs, [[(0, 0), (3, 0), (6, 0), (3, 0)], []])
        self.assertEqual(skel.dirty, [])
        self.assertEqual(skel.hairs, skel.prehairs)
        self.assertEqual(skel.hair_count, 4)

    def test_dirty_boxes_remove_nearby_hairs(self):
        skel = decorate(out_and_back(), 3, METRIC, SkeletonConstants(c1=1.0))
        self.assertEqual(skel.dirty, [(-3, 0), (0, 0), (3, 0)])
        self.assertEqual(skel.hair_count, 0)

    def test_box_helpers(self):
        self.assertEqual(box_index((-1, 5), 3), (-3, 3))
        self.assertEqual(len(box_sites([(0, 0)], 2, 2)), 4)
        self.assertEqual(box_sites([], 3, 2).shape, (0, 2))
        with self.assertRaises(ValueError):
            mark_dirty_boxes([], 3, 0.0)

    def test_json_round_trip(self):
        skel = decorate(out_and_back(), 3, METRIC)
        target = skel.save(FilePath(self.test_dir) / "skeleton.json")
        with open(target) as f:
            restored = DecoratedSkeleton.from_json(json.load(f))
        self.assertEqual(restored, skel)

    def test_pieces_reject_other_paths(self):
        skel = decorate(out_and_back(), 3, METRIC)
        with self.assertRaises(ValueError):
            skel.pieces(Path.straight(2, 1, 17))
        with self.assertRaises(ValueError):
            skel.pieces(Path((1, 0), (1,) * 18))

    def test_bad_constants(self):
        with self.assertRaises(ValueError):
            SkeletonConstants(c1=0.0)
        with self.assertRaises(ValueError):
            SkeletonConstants(nu=0.7, nu_tilde=0.6)
        with self.assertRaises(ValueError):
            SkeletonConstants(kappa=0.0)


walks = st.lists(st.sampled_from([1, -1, 2, -2]), min_size=1, max_size=40)


class TestSkeletonProperties(unittest.TestCase):
    """Structural checks on arbitrary paths."""

    @settings(max_examples=60, deadline=None)
    @given(walks)
    def test_structure_holds(self, steps):
        path = Path((0, 0), tuple(steps))
        skel = decorate(path, 3, METRIC)
        checks = check_skeleton(path, skel, METRIC)
        self.assertTrue(checks.reconstruction)
        self.assertTrue(checks.disjoint)
        self.assertTrue(checks.hop_ok)
        self.assertTrue(checks.ok)
        self.assertGreaterEqual(checks.psi, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(walks, st.sampled_from([PotentialSpec.sausage(0.7), PotentialSpec.power(1.0, 0.5)]))
    def test_energy_split_gap_non_negative(self, steps, phi):
        path = Path((0, 0), tuple(steps))
        constants = SkeletonConstants(c1=1.0)
        skel = decorate(path, 3, METRIC, constants)
        self.assertGreaterEqual(energy_split_gap(path, skel, phi, METRIC, constants.c1), -1e-9)

    def test_covering_radius_of_straight_path(self):
        path = Path.straight(2, 1, 10)
        skel = decorate(path, 3, METRIC)
        self.assertAlmostEqual(covering_radius(path, skel, METRIC), 1 / 3)


class TestSurchargeAndCensus(unittest.TestCase):
    """Surcharges, cone points of skeletons and the weighted census."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.h = (1.0, 0.0)

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_straight_path_has_zero_surcharge(self):
        skel = decorate(Path.straight(2, 1, 10), 3, METRIC)
        s = skeleton_surcharge(skel, self.h, METRIC)
        self.assertAlmostEqual(s.total, 0.0)
        cone = ConeSpec(self.h, METRIC)
        self.assertEqual(skeleton_cone_points(skel, cone), [0, 1, 2, 3])
        self.assertEqual(slab_count(skel, cone), 0)

    def test_backtracking_costs_surcharge(self):
        skel = decorate(out_and_back(), 3, METRIC)
        s = skeleton_surcharge(skel, self.h, METRIC, SkeletonConstants(c2=0.0))
        self.assertAlmostEqual(s.trunk_lo, 12.0)
        self.assertAlmostEqual(s.hair_term, 0.0)

    def test_census(self):
        batch = SimpleNamespace(paths=[Path.straight(2, 1, 10), out_and_back()],
                                log_weights=np.array([-1.0, -1.0]))
        census = skeleton_census(batch, 3, self.h, METRIC, SkeletonConstants(c2=0.0))
        self.assertAlmostEqual(sum(r.weight for r in census.rows), 1.0)
        self.assertAlmostEqual(census.fraction_exceeding(0.1), 0.5)
        self.assertAlmostEqual(census.median_surcharge_per_length(), 0.0)
        self.assertEqual(census.histogram("trunk_size"), [(3, 0.5), (4, 0.5)])
        target = census.write_csv(FilePath(self.test_dir) / "census.csv")
        with open(target, newline="") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), 2)
        self.assertIn("slab_count", rows[0])


def run_tests():
    """Run all tests."""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for case in (TestTrunk, TestDecoration, TestSkeletonProperties, TestSurchargeAndCensus):
        suite.addTests(loader.loadTestsFromTestCase(case))
    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite).wasSuccessful()


if __name__ == "__main__":
    sys.exit(0 if run_tests() else 1)
