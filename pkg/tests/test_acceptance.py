"""
Long-running end-to-end checks. Set FAMAMBA_ACCEPTANCE=1 to run them.
"""

import io
import os
import shutil
import tempfile
import unittest

from main import ATTENTION_SLOPE_RANGE, SCAN_SLOPE_RANGE, FAMambaCLI
from models.restoration import DegradeSpec, ModelConfig, TrainConfig
from services.benchmark import bench_scan
from services.datasynth import make_dataset
from services.network import build
from services.trainer import train

ENABLED = os.getenv('FAMAMBA_ACCEPTANCE') == '1'


@unittest.skipUnless(ENABLED, "set FAMAMBA_ACCEPTANCE=1 to run acceptance checks")
class TestAcceptance(unittest.TestCase):
    """Toy restoration, overfitting and scan linearity."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_toy_restoration_gain(self):
        """Test that toy training beats the degraded input by the required margin."""
        cli = FAMambaCLI(threads=1, seed=7, out=io.StringIO())
        report = cli.train(None, os.path.join(self.test_dir, 'toy.famamba'))
        self.assertEqual(len(report.table), 4)
        self.assertGreaterEqual(report.gain_db, 3.0)

    def test_overfit_single_pair(self):
        """Test that the network can drive the loss down on a single pair."""
        dataset = make_dataset(1, 32, 32, DegradeSpec(density=0.3), seed=7)
        config = TrainConfig(steps1=500, steps2=0, lr1=1e-3, batch_size=1, crop_size=0, log_every=100)
        _, history = train(build(ModelConfig.toy()), dataset, config)
        self.assertLess(history[-1][1], 0.1 * history[0][1])

    def test_scan_linear_attention_quadratic(self):
        """Test scan time grows linearly while attention grows quadratically."""
        result = bench_scan([4096, 8192, 16384, 32768, 65536], repeats=9, attention_max_length=None)
        self.assertGreaterEqual(result.scan_slope, SCAN_SLOPE_RANGE[0])
        self.assertLessEqual(result.scan_slope, SCAN_SLOPE_RANGE[1])
        self.assertGreaterEqual(result.attention_slope, ATTENTION_SLOPE_RANGE[0])
        self.assertLessEqual(result.attention_slope, ATTENTION_SLOPE_RANGE[1])


if __name__ == '__main__':
    unittest.main()
