"""
Unit tests for the scan timing harness.
"""

import math
import unittest

import numpy as np

from services import benchmark


class TestSlope(unittest.TestCase):
    """Log-log growth exponents."""

    def test_linear_and_quadratic(self):
        """Test slopes of exactly linear and quadratic series."""
        lengths = [1024, 2048, 4096, 8192]
        self.assertAlmostEqual(benchmark.loglog_slope(lengths, [3e-6 * n for n in lengths]), 1.0, places=9)
        self.assertAlmostEqual(benchmark.loglog_slope(lengths, [1e-9 * n * n for n in lengths]), 2.0, places=9)

    def test_skipped_points_ignored(self):
        """Test that skipped timings are left out of the fit."""
        lengths = [100, 200, 400]
        self.assertAlmostEqual(benchmark.loglog_slope(lengths, [1.0, 2.0, float('nan')]), 1.0, places=9)
        self.assertTrue(math.isnan(benchmark.loglog_slope(lengths, [1.0, float('nan'), float('nan')])))


class TestBenchScan(unittest.TestCase):
    """A small end-to-end timing table."""

    def test_table_layout(self):
        """Test the rows and columns of the timing table."""
        result = benchmark.bench_scan([64, 32, 128], d_inner=4, d_state=4, repeats=1, attention_max_length=64)
        self.assertEqual(list(result.table.columns), ['length', 'scan_seconds', 'attention_seconds'])
        self.assertEqual(list(result.table['length']), [32, 64, 128])
        self.assertTrue(np.all(result.table['scan_seconds'] > 0))
        self.assertTrue(math.isnan(result.table['attention_seconds'].iloc[2]))
        self.assertTrue(np.isfinite(result.table['attention_seconds'].iloc[:2]).all())
        self.assertTrue(math.isfinite(result.scan_slope))

    def test_inputs_are_stable(self):
        """Test shapes and stability of the generated scan inputs."""
        u, delta, A, B, C, D = benchmark.scan_inputs(16, 3, 5, np.random.default_rng(0))
        self.assertEqual(u.shape, (1, 3, 16))
        self.assertEqual(delta.shape, (1, 16, 3))
        self.assertEqual(A.shape, (3, 5))
        self.assertTrue(np.all(A < 0))
        self.assertTrue(np.all(delta > 0))

    def test_median_time(self):
        """Test that the reported time is the median of repeats."""
        calls = []
        seconds = benchmark.median_time(lambda: calls.append(1), 3)
        self.assertEqual(len(calls), 3)
        self.assertGreaterEqual(seconds, 0.0)


if __name__ == '__main__':
    unittest.main()
