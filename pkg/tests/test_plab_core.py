"""
polymerlab core tests
Paths, local times, potentials, weights, random streams and the path file format.
"""

import math
import os
import shutil
import sys
import tempfile
import unittest
from pathlib import Path as FilePath
from unittest import mock

import numpy as np
from hypothesis import given, settings, strategies as st

sys.path.insert(0, str(FilePath(__file__).parent.parent / "src"))

from plab_core import (
    EnsembleConfig,
    InvalidPotential,
    Path,
    PotentialSpec,
    WeightParams,
    apply_symmetry,
    format_path,
    lattice_symmetries,
    local_times,
    parse_path,
    parse_potential,
    potential_energy,
    read_paths,
    stream,
    validate_potential,
    weight,
    worker_count,
    write_paths,
)


steps_2d = st.lists(st.sampled_from([1, -1, 2, -2]), max_size=12)


class TestPath(unittest.TestCase):
    """Path construction and algebra."""

    def test_vertices_follow_step_codes(self):
        path = Path((0, 0), (1, 2, -1, -2))
        self.assertEqual(path.vertices, ((0, 0), (1, 0), (1, 1), (0, 1), (0, 0)))
        self.assertEqual(path.displacement, (0, 0))
        self.assertEqual(len(path), 4)

    def test_from_vertices_rejects_jumps(self):
        with self.assertRaises(ValueError):
            Path.from_vertices([(0, 0), (2, 0)])

    def test_invalid_step_code(self):
        with self.assertRaises(ValueError):
            Path((0, 0), (3,))
        with self.assertRaises(ValueError):
            Path((0,) * 5)

    def test_concat_requires_matching_endpoint(self):
        a = Path.straight(2, 1, 3)
        with self.assertRaises(ValueError):
            a.concat(Path((0, 0), (2,)))
        joined = a.concat(Path((3, 0), (2, 2)))
        self.assertEqual(joined.endpoint, (3, 2))

    def test_sub_and_reverse(self):
        path = Path((0, 0), (1, 1, 2, -1))
        middle = path.sub(1, 3)
        self.assertEqual(middle.start, (1, 0))
        self.assertEqual(middle.endpoint, (2, 1))
        back = path.reversed()
        self.assertEqual(back.start, path.endpoint)
        self.assertEqual(back.endpoint, path.start)
        with self.assertRaises(ValueError):
            path.sub(3, 1)

    @settings(max_examples=50, deadline=None)
    @given(steps_2d)
    def test_symmetries_preserve_length_and_range(self, steps):
        path = Path((0, 0), tuple(steps))
        for sym in lattice_symmetries(2):
            image = path.transformed(sym)
            self.assertEqual(image.length, path.length)
            self.assertEqual(local_times(image).range_size, local_times(path).range_size)

    def test_group_sizes_and_endpoints(self):
        self.assertEqual(len(lattice_symmetries(2)), 8)
        self.assertEqual(len(lattice_symmetries(3)), 48)
        path = Path((0, 0), (1, 1, 2))
        for sym in lattice_symmetries(2):
            self.assertEqual(path.transformed(sym).endpoint, apply_symmetry(sym, path.endpoint))


class TestLocalTimes(unittest.TestCase):
    """Visit counts and the half-open convention."""

    def test_out_and_back(self):
        ell = local_times(Path((0, 0), (1, -1)))
        self.assertEqual(ell[(0, 0)], 2)
        self.assertEqual(ell[(1, 0)], 1)
        self.assertEqual(ell.total_mass, 3)
        self.assertEqual(ell.range_size, 2)

    def test_skip_first_drops_initial_vertex(self):
        ell = local_times(Path.straight(2, 1, 2), skip_first=True)
        self.assertNotIn((0, 0), ell)
        self.assertEqual(ell.total_mass, 2)

    @settings(max_examples=50, deadline=None)
    @given(steps_2d)
    def test_total_mass_is_length_plus_one(self, steps):
        path = Path((0, 0), tuple(steps))
        self.assertEqual(local_times(path).total_mass, path.length + 1)
        self.assertEqual(local_times(path.reversed()), local_times(path))


class TestPotentials(unittest.TestCase):
    """Potential families, parsing and validation."""

    def test_values(self):
        self.assertEqual(PotentialSpec.sausage(0.7).phi(0), 0.0)
        self.assertEqual(PotentialSpec.sausage(0.7).phi(5), 0.7)
        self.assertAlmostEqual(PotentialSpec.power(2.0, 0.5).phi(4), 4.0)
        self.assertAlmostEqual(PotentialSpec.annealed_gamma(2.0, 1.0).phi(3), 2.0 * math.log(4.0))

    def test_annealed_hard_traps(self):
        phi = PotentialSpec.annealed({0.0: 0.6, math.inf: 0.4})
        for ell in (1, 2, 10):
            self.assertAlmostEqual(phi.phi(ell), -math.log(0.6))

    def test_annealed_dist_matches_gamma_closed_form(self):
        numeric = PotentialSpec.annealed_dist("gamma", a=2.0, scale=1.0)
        closed = PotentialSpec.annealed_gamma(2.0, 1.0)
        for ell in (1, 2, 5):
            self.assertAlmostEqual(numeric.phi(ell), closed.phi(ell), places=6)

    def test_parse_describe_round_trip(self):
        for text in ("sausage:0.5", "power:1.0,0.5", "annealed:0.0=0.6,inf=0.4",
                     "annealed-gamma:2.0,1.0", "annealed-dist:expon,scale=2.0"):
            spec = parse_potential(text)
            self.assertEqual(parse_potential(spec.describe()), spec)

    def test_parse_rejects_garbage(self):
        for text in ("sausage", "sausage:a", "power:1", "teleport:1", "annealed:0=0.5"):
            with self.assertRaises(ValueError):
                parse_potential(text)

    def test_bad_parameters(self):
        with self.assertRaises(ValueError):
            PotentialSpec.sausage(-1.0)
        with self.assertRaises(ValueError):
            PotentialSpec.power(1.0, 0.0)
        with self.assertRaises(ValueError):
            PotentialSpec.annealed_dist("no_such_law")

    def test_valid_potentials(self):
        for phi in (PotentialSpec.sausage(0.5), PotentialSpec.power(1.0, 0.5),
                    PotentialSpec.annealed_gamma(2.0, 1.0)):
            report = validate_potential(phi, grid=50)
            self.assertTrue(report.valid, phi.describe())
            self.assertTrue(report.positive)

    def test_linear_potential_reports_lambda0(self):
        phi = PotentialSpec.power(1.0, 1.0)
        with self.assertRaises(InvalidPotential) as ctx:
            validate_potential(phi, grid=50)
        self.assertFalse(ctx.exception.report.sublinear)
        report = validate_potential(phi, grid=50, strict=False)
        self.assertAlmostEqual(report.lambda0, 1.0, places=6)

    def test_superadditive_potential_has_witness(self):
        report = validate_potential(PotentialSpec.power(1.0, 2.0), grid=20, strict=False)
        self.assertFalse(report.subadditive)
        self.assertIsNotNone(report.witness)

    def test_zero_potential_flagged(self):
        report = validate_potential(PotentialSpec.sausage(0.0), grid=10, strict=False)
        self.assertTrue(report.monotone and report.subadditive and report.sublinear)
        self.assertFalse(report.positive)
        self.assertFalse(report.valid)
        with self.assertRaises(InvalidPotential) as ctx:
            validate_potential(PotentialSpec.sausage(0.0), grid=10)
        self.assertIn("φ(1) = 0", str(ctx.exception))


class TestWeights(unittest.TestCase):
    """Log-weights of paths."""

    def test_out_and_back_weight(self):
        beta = 0.8
        w = WeightParams((0.3, 0.0), lam=0.1)
        value = weight(Path((0, 0), (1, -1)), PotentialSpec.sausage(beta), w)
        self.assertAlmostEqual(value, -2 * beta - 0.2 - 2 * math.log(4))

    def test_half_open_convention(self):
        phi = PotentialSpec.sausage(1.0)
        path = Path.straight(2, 1, 2)
        w = WeightParams((0.5, 0.0))
        full = weight(path, phi, w)
        half = weight(path, phi, w, skip_first=True)
        self.assertAlmostEqual(full - half, -1.0)
        self.assertAlmostEqual(half, -2.0 + 1.0 - 2 * math.log(4))

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            weight(Path((0, 0)), PotentialSpec.sausage(1.0), WeightParams((0.0,)))

    @settings(max_examples=60, deadline=None)
    @given(steps_2d, steps_2d)
    def test_energy_subadditive_under_concatenation(self, first, second):
        phi = PotentialSpec.power(1.0, 0.5)
        a = Path((0, 0), tuple(first))
        b = Path(a.endpoint, tuple(second))
        joined = a.concat(b)
        total = potential_energy(joined, phi)
        split = potential_energy(a, phi) + potential_energy(b, phi, skip_first=True)
        self.assertLessEqual(total, split + 1e-9)

    def test_ensemble_config_defaults(self):
        cfg = EnsembleConfig(d=3)
        self.assertEqual(cfg.h, (0.0, 0.0, 0.0))
        self.assertEqual(cfg.with_drift((1, 0, 0)).h, (1.0, 0.0, 0.0))
        with self.assertRaises(ValueError):
            EnsembleConfig(d=2, h=(1.0,))
        with self.assertRaises(ValueError):
            EnsembleConfig(lam=-1.0)
        with self.assertRaises(ValueError):
            EnsembleConfig(K=0)


class TestStreams(unittest.TestCase):
    """Counter-based random streams and the worker cap."""

    def test_reproducible(self):
        a = stream(7, "sampler.metropolis", 3).random(5)
        b = stream(7, "sampler.metropolis", 3).random(5)
        np.testing.assert_array_equal(a, b)

    def test_independent_indices_and_names(self):
        base = stream(7, "sampler.metropolis", 3).random(5)
        self.assertFalse(np.array_equal(base, stream(7, "sampler.metropolis", 4).random(5)))
        self.assertFalse(np.array_equal(base, stream(7, "sampler.perm", 3).random(5)))
        self.assertFalse(np.array_equal(base, stream(8, "sampler.metropolis", 3).random(5)))

    def test_worker_cap(self):
        with mock.patch.dict(os.environ, {"POLYMERLAB_THREADS": "4"}):
            self.assertEqual(worker_count(), 4)
            self.assertEqual(worker_count(10), 4)
            self.assertEqual(worker_count(2), 2)
        with mock.patch.dict(os.environ, {"POLYMERLAB_THREADS": "zero"}):
            self.assertEqual(worker_count(8), 1)


class TestPathFiles(unittest.TestCase):
    """The `d;start;steps` text format."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_format(self):
        self.assertEqual(format_path(Path((0, 1), (1, -2))), "2;0,1;+1 -2")
        self.assertEqual(parse_path("2;0,0;"), Path((0, 0)))

    def test_write_read(self):
        paths = [Path((0, 0), (1, 2, -1)), Path((1, -1, 0)), Path.straight(3, 3, 4)]
        target = write_paths(FilePath(self.test_dir) / "sample.paths", paths, header="two lines\nof header")
        self.assertEqual(read_paths(target), paths)

    def test_malformed_line_reports_line_number(self):
        target = FilePath(self.test_dir) / "bad.paths"
        target.write_text("# header\n2;0,0;+1\n2;0,0;+1 x\n")
        with self.assertRaises(ValueError) as ctx:
            read_paths(target)
        self.assertIn("line 3", str(ctx.exception))

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            read_paths(FilePath(self.test_dir) / "absent.paths")

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            parse_path("3;0,0;+1")


def run_tests():
    """Run all tests."""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for case in (TestPath, TestLocalTimes, TestPotentials, TestWeights, TestStreams, TestPathFiles):
        suite.addTests(loader.loadTestsFromTestCase(case))
    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite).wasSuccessful()


if __name__ == "__main__":
    sys.exit(0 if run_tests() else 1)
