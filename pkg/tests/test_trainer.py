"""
Unit tests for the optimizer, batch pipeline, training loop and evaluation.
"""

import math
import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose, assert_array_equal

from models.restoration import DegradeSpec, EvaluationReport, LossWeights, ModelConfig, OptimState, TrainConfig
from services import numerics as nx
from services import trainer
from services.datasynth import make_dataset
from services.layers import Module
from services.network import build
from services.numerics import Parameter
from utils.errors import ConfigError, DimensionError, TrainingError


def quick_config(**overrides) -> TrainConfig:
    values = dict(steps1=2, steps2=1, batch_size=1, crop_size=0, log_every=1, prefetch=0)
    values.update(overrides)
    return TrainConfig(**values)


class Overflowing(Module):
    """Squares its input through a huge float32 weight."""

    def __init__(self):
        self.weight = Parameter(np.array([3e38], dtype=np.float32))

    def forward(self, x):
        return nx.mul(nx.mul(x, self.weight), self.weight)


class TestAdam(unittest.TestCase):
    """Closed-form optimizer steps."""

    def test_first_step(self):
        """Test the first Adam step in closed form."""
        p = Parameter(np.array([0.0]), dtype=np.float64)
        state = OptimState.zeros_like([p.data])
        trainer.adam_step([p], [np.array([1.0])], state, lr=0.1)
        self.assertAlmostEqual(float(p.data[0]), -0.1 / (1 + 1e-8), places=12)
        self.assertEqual(state.step, 1)

    def test_zero_gradient_keeps_parameters(self):
        """Test that a zero gradient keeps parameters."""
        p = Parameter(np.array([1.5, -2.0]), dtype=np.float64)
        state = OptimState.zeros_like([p.data])
        trainer.adam_step([p], [np.array([1.0, 1.0])], state, lr=0.1)
        moved = p.data.copy()
        trainer.adam_step([p], [np.zeros(2)], state, lr=0.0)
        assert_array_equal(p.data, moved)
        p2 = Parameter(np.array([1.5, -2.0]), dtype=np.float64)
        trainer.adam_step([p2], [np.zeros(2)], OptimState.zeros_like([p2.data]), lr=0.1)
        assert_array_equal(p2.data, [1.5, -2.0])

    def test_identical_runs_identical_trajectories(self):
        """Test that identical runs follow identical trajectories."""
        grads = [np.random.default_rng(0).standard_normal(3) for _ in range(5)]
        trajectories = []
        for _ in range(2):
            p = Parameter(np.ones(3), dtype=np.float64)
            state = OptimState.zeros_like([p.data])
            for g in grads:
                trainer.adam_step([p], [g], state, lr=0.01)
            trajectories.append(p.data.copy())
        assert_array_equal(trajectories[0], trajectories[1])

    def test_misaligned_inputs(self):
        """Test that misaligned inputs are rejected."""
        p = Parameter(np.ones(2), dtype=np.float64)
        with self.assertRaises(DimensionError):
            trainer.adam_step([p], [], OptimState.zeros_like([p.data]), lr=0.1)


class TestClipping(unittest.TestCase):
    """Global-norm gradient clipping."""

    def test_clip_scales_to_limit(self):
        """Test that clipping scales to the limit."""
        grads = [np.array([3.0]), np.array([4.0])]
        clipped, norm = trainer.clip_grad_norm(grads, 1.0)
        self.assertEqual(norm, 5.0)
        self.assertAlmostEqual(trainer.global_norm(clipped), 1.0)

    def test_clip_never_increases_norm(self):
        """Test that clipping never increases the norm."""
        rng = np.random.default_rng(1)
        for limit in (0.0, 0.5, 2.0, 100.0):
            grads = [rng.standard_normal(4), rng.standard_normal((2, 3))]
            clipped, norm = trainer.clip_grad_norm(grads, limit)
            self.assertLessEqual(trainer.global_norm(clipped), norm + 1e-12)


class TestBatches(unittest.TestCase):
    """Sampling and the prefetch queue."""

    def setUp(self):
        self.dataset = make_dataset(3, 16, 16, DegradeSpec(), seed=2)

    def test_prefetch_matches_inline_order(self):
        """Test that prefetch matches the inline order."""
        config = quick_config(batch_size=2, crop_size=8, steps1=6, steps2=0)
        inline = list(trainer._batches(trainer.BatchSampler(self.dataset, config), 6, 0))
        prefetched = list(trainer._batches(trainer.BatchSampler(self.dataset, config), 6, 2))
        self.assertEqual(len(prefetched), 6)
        for (ca, da), (cb, db) in zip(inline, prefetched):
            assert_array_equal(ca, cb)
            assert_array_equal(da, db)

    def test_crop_shape(self):
        """Test the crop shape."""
        clean, degraded = trainer.BatchSampler(self.dataset, quick_config(batch_size=2, crop_size=8)).sample()
        self.assertEqual(clean.shape, (2, 3, 8, 8))
        self.assertEqual(degraded.shape, (2, 3, 8, 8))

    def test_empty_dataset(self):
        """Test that an empty dataset is rejected."""
        with self.assertRaises(DimensionError):
            trainer.BatchSampler([], quick_config())


class TestTrainConfig(unittest.TestCase):
    """Schedule and validation."""

    def test_two_phase_schedule(self):
        """Test the two-phase learning rate schedule."""
        config = TrainConfig(steps1=3, lr1=3e-4, steps2=2, lr2=1e-4)
        self.assertEqual(config.total_steps, 5)
        self.assertEqual([config.lr_at(s) for s in range(1, 6)], [3e-4] * 3 + [1e-4] * 2)

    def test_invalid(self):
        """Test that invalid train configs are rejected."""
        for overrides in (dict(batch_size=0), dict(steps1=0, steps2=0), dict(lr1=-1.0), dict(grad_clip=-1.0)):
            with self.assertRaises(ConfigError):
                TrainConfig(**overrides).validate()


class TestTrain(unittest.TestCase):
    """End-to-end optimization on the toy network."""

    def setUp(self):
        self.dataset = make_dataset(2, 16, 16, DegradeSpec(density=0.4), seed=3)
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_deterministic_and_finite(self):
        """Test that training is deterministic and finite."""
        histories = []
        for _ in range(2):
            model = build(ModelConfig.toy(depths=[1]))
            _, history = trainer.train(model, self.dataset, quick_config(prefetch=2))
            histories.append(history)
            self.assertEqual(model.trained_steps, 3)
        self.assertEqual([step for step, _ in histories[0]], [1, 2, 3])
        self.assertEqual(histories[0], histories[1])
        self.assertTrue(all(math.isfinite(loss) for _, loss in histories[0]))

    def test_zero_learning_rate_keeps_loss_constant(self):
        """Test that a zero learning rate keeps the loss constant."""
        model = build(ModelConfig.toy(depths=[1]))
        before = model.state_dict()
        _, history = trainer.train(model, self.dataset[:1], quick_config(lr1=0.0, lr2=0.0))
        losses = [loss for _, loss in history]
        self.assertTrue(all(loss == losses[0] for loss in losses))
        for name, value in model.state_dict().items():
            assert_array_equal(value, before[name])

    def test_on_step_callback(self):
        """Test the per-step callback."""
        seen = []
        trainer.train(build(ModelConfig.toy(depths=[1])), self.dataset, quick_config(),
                      weights=LossWeights(0.0), on_step=lambda step, loss: seen.append(step))
        self.assertEqual(seen, [1, 2, 3])

    def test_non_finite_loss_names_step(self):
        """Test that a non-finite loss names its step."""
        with self.assertRaises(TrainingError) as ctx:
            trainer.train(Overflowing(), self.dataset, quick_config(), weights=LossWeights(0.0))
        self.assertEqual(ctx.exception.step, 1)
        self.assertEqual(ctx.exception.exit_code, 4)

    def test_loss_history_csv(self):
        """Test the loss history CSV."""
        path = os.path.join(self.test_dir, 'out', 'history.csv')
        trainer.write_loss_history([(1, 0.5), (2, 0.25)], path)
        with open(path) as f:
            self.assertEqual(f.readline().strip(), 'step,loss')
        table = pd.read_csv(path)
        assert_allclose(table['loss'], [0.5, 0.25])


class TestEvaluate(unittest.TestCase):
    """Fidelity tables."""

    def test_identity_on_clean_pairs_is_infinite(self):
        """Test identity on clean pairs gives infinite PSNR."""
        dataset = make_dataset(2, 16, 16, DegradeSpec(density=0.0), seed=4)
        report = trainer.evaluate(trainer.IdentityRestorer(), dataset)
        self.assertEqual(list(report.table['pair']), [0, 1])
        self.assertTrue(math.isinf(report.mean_psnr))
        self.assertAlmostEqual(report.mean_ssim, 1.0, places=9)
        self.assertEqual(report.gain_db, 0.0)

    def test_gain_with_infinite_means(self):
        """Test gain when one or both PSNR means are infinite."""
        table = pd.DataFrame({'pair': [0, 1], 'psnr': [math.inf, 30.0], 'ssim': [1.0, 0.9],
                              'input_psnr': [math.inf, 20.0], 'input_ssim': [1.0, 0.8]})
        self.assertEqual(EvaluationReport(table).gain_db, 0.0)
        table['input_psnr'] = [25.0, 20.0]
        self.assertEqual(EvaluationReport(table).gain_db, math.inf)

    def test_identity_on_degraded_pairs_has_no_gain(self):
        """Test identity on degraded pairs gives no gain."""
        dataset = make_dataset(2, 16, 16, DegradeSpec(density=0.4), seed=5)
        report = trainer.evaluate(trainer.IdentityRestorer(), dataset)
        self.assertEqual(report.gain_db, 0.0)
        self.assertEqual(report.mean_input_ssim, report.mean_ssim)

    def test_deterministic(self):
        """Test that evaluation is deterministic."""
        dataset = make_dataset(1, 16, 16, DegradeSpec(), seed=6)
        model = build(ModelConfig.toy(depths=[1]))
        first = trainer.evaluate(model, dataset).table
        second = trainer.evaluate(model, dataset).table
        pd.testing.assert_frame_equal(first, second)

    def test_empty(self):
        """Test that evaluation rejects an empty dataset."""
        with self.assertRaises(DimensionError):
            trainer.evaluate(trainer.IdentityRestorer(), [])


if __name__ == '__main__':
    unittest.main()
