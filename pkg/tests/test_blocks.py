"""
Unit tests for DFEB, the prior-guided block, HFEM and the FA-Block.
"""

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from models.frequency import ScanMode
from models.restoration import GlobalBranch, ModelConfig
from services import numerics as nx
from services.blocks import (AttentionBranch, DFEB, FABlock, HFEM, PRIOR_CHANNELS, FrequencyMamba, PriorGuidedBlock,
                             match_resolution)
from services.numerics import Parameter, Tensor
from services.wavelet import dwt2, high_bands
from utils.errors import DimensionError

CHANNELS = 4


def toy_config(**overrides) -> ModelConfig:
    values = dict(depths=[1], channels=CHANNELS, hfem_channels=2, d_state=3, precision=64)
    values.update(overrides)
    return ModelConfig(**values).validate()


def zero_module(module) -> None:
    for p in module.parameters():
        p.assign(np.zeros_like(p.data))


class GradcheckMixin:
    def assertGradcheck(self, objective, params, samples=100):
        result = nx.gradcheck(objective, params, samples=samples, seed=1)
        self.assertGreaterEqual(result.checked, min(samples, sum(p.size for p in params)))
        self.assertTrue(result.passed(1e-4), f"{result.max_relative_error:.3e} at {result.worst}")


def projected_loss(out: Tensor, direction: Tensor) -> Tensor:
    return nx.mean(nx.mul(out, direction))


class TestDFEB(GradcheckMixin, unittest.TestCase):
    """Dual-branch additivity and gradients."""

    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.x = Tensor(self.rng.standard_normal((1, CHANNELS, 8, 8)))

    def test_shape_preserved(self):
        """Test DFEB output shape under each scan mode."""
        for mode in ScanMode:
            block = DFEB(CHANNELS, toy_config(scan_mode=mode), self.rng, dtype=np.float64)
            self.assertEqual(block(self.x).shape, self.x.shape)

    def test_zero_mamba_gives_cnn_branch(self):
        """Test that a zeroed Mamba branch leaves only the CNN branch."""
        block = DFEB(CHANNELS, toy_config(), self.rng, dtype=np.float64)
        zero_module(block.mamba)
        assert_array_equal(block(self.x).data, block.cnn(self.x).data)

    def test_zero_cnn_gives_mamba_branch(self):
        """Test that a zeroed CNN branch leaves only the Mamba branch."""
        block = DFEB(CHANNELS, toy_config(), self.rng, dtype=np.float64)
        zero_module(block.cnn)
        assert_array_equal(block(self.x).data, block.mamba(self.x).data)

    def test_additivity(self):
        """Test that DFEB output is the sum of its branches."""
        block = DFEB(CHANNELS, toy_config(), self.rng, dtype=np.float64)
        local, global_ = block.branches(self.x)
        assert_array_equal(block(self.x).data, local.data + global_.data)

    def test_cnn_only_ablation(self):
        """Test the CNN-only ablation."""
        block = DFEB(CHANNELS, toy_config(use_mamba=False), self.rng, dtype=np.float64)
        self.assertIsNone(block.mamba)
        assert_array_equal(block(self.x).data, block.cnn(self.x).data)

    def test_each_band_kind_owns_a_core(self):
        """Test that every band kind gets its own scan core."""
        mamba = FrequencyMamba(CHANNELS, toy_config(), self.rng, dtype=np.float64)
        self.assertEqual(sorted(mamba.cores), ['hh', 'hl', 'lh', 'll'])
        cross = FrequencyMamba(CHANNELS, toy_config(scan_mode=ScanMode.CROSS2D), self.rng, dtype=np.float64)
        self.assertEqual(list(cross.cores), ['cross2d'])

    def test_gradients(self):
        """Test DFEB gradients against central differences."""
        block = DFEB(CHANNELS, toy_config(), self.rng, dtype=np.float64)
        x = Parameter(self.x.data, dtype=np.float64)
        direction = Tensor(self.rng.standard_normal(x.shape))
        self.assertGradcheck(lambda: projected_loss(block(x), direction), [x] + block.parameters())


class TestAttentionBranch(GradcheckMixin, unittest.TestCase):
    """Self-attention as the global path."""

    def setUp(self):
        self.rng = np.random.default_rng(4)
        self.x = Tensor(self.rng.standard_normal((1, CHANNELS, 4, 4)))
        self.branch = AttentionBranch(CHANNELS, self.rng, dtype=np.float64)

    def test_every_pixel_sees_every_other(self):
        """Test that editing one pixel moves the output at all pixels."""
        out = self.branch(self.x).data
        edited = self.x.data.copy()
        edited[0, :, 0, 0] += 1.0
        moved = np.abs(self.branch(Tensor(edited)).data - out).max(axis=1)[0]
        self.assertEqual(moved.shape, (4, 4))
        self.assertTrue(np.all(moved > 0))

    def test_zero_keys_average_values(self):
        """Test that uniform scores give one averaged value at every pixel."""
        weight = self.branch.qkv.weight
        data = weight.data.copy()
        data[:2 * CHANNELS] = 0.0
        weight.assign(data)
        out = self.branch(self.x).data
        assert_allclose(out, np.broadcast_to(out[..., :1, :1], out.shape), atol=1e-12)

    def test_dfeb_uses_attention(self):
        """Test the attention switch on DFEB, including the zeroed global path."""
        block = DFEB(CHANNELS, toy_config(global_branch=GlobalBranch.ATTENTION), self.rng, dtype=np.float64)
        self.assertIsNone(block.mamba)
        self.assertIs(block.global_path, block.attention)
        zero_module(block.attention)
        assert_array_equal(block(self.x).data, block.cnn(self.x).data)

    def test_disabled_global_path_ignores_branch_choice(self):
        """Test that use_mamba = false drops attention too."""
        block = DFEB(CHANNELS, toy_config(use_mamba=False, global_branch=GlobalBranch.ATTENTION),
                     self.rng, dtype=np.float64)
        self.assertIsNone(block.global_path)

    def test_flops_quadratic_in_pixels(self):
        """Test the attention cost term grows with the square of the area."""
        small, large = self.branch.flops(4, 4), self.branch.flops(8, 8)
        self.assertGreater(large, 4 * small)

    def test_gradients(self):
        """Test attention gradients against central differences."""
        x = Parameter(self.x.data, dtype=np.float64)
        direction = Tensor(self.rng.standard_normal(x.shape))
        self.assertGradcheck(lambda: projected_loss(self.branch(x), direction), [x] + self.branch.parameters())


class TestPriorGuidedBlock(GradcheckMixin, unittest.TestCase):
    """Channel attention keyed by the prior."""

    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.block = PriorGuidedBlock(CHANNELS, self.rng, dtype=np.float64)
        self.x = Tensor(self.rng.standard_normal((2, CHANNELS, 8, 8)))
        self.prior = Tensor(self.rng.standard_normal((2, PRIOR_CHANNELS, 8, 8)))

    def test_attention_is_row_stochastic(self):
        """Test that attention rows sum to one."""
        weights, residual, _ = self.block.attention(self.x, self.prior)
        self.assertEqual(weights.shape, (2, 3 * CHANNELS, 3 * CHANNELS))
        self.assertEqual(residual.shape, (2, 3 * CHANNELS, 4, 4))
        self.assertTrue(np.all(weights.data >= 0))
        assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_uniform_attention_averages_values(self):
        """Test that uniform attention averages the values."""
        zero_module(self.block.k_point)
        zero_module(self.block.k_depth)
        weights, residual, bands = self.block.attention(self.x, self.prior)
        assert_allclose(weights.data, 1.0 / (3 * CHANNELS))
        v = self.block.v_depth(self.block.v_point(high_bands(bands))).data
        expected = np.broadcast_to(v.mean(axis=1, keepdims=True), v.shape)
        assert_allclose(residual.data, expected, atol=1e-12)

    def test_zero_values_leave_high_bands(self):
        """Test that zero values leave the high bands unchanged."""
        zero_module(self.block.v_point)
        zero_module(self.block.v_depth)
        fused = self.block.fuse(self.x, self.prior)
        bands = dwt2(self.x)
        assert_array_equal(fused.ll.data, bands.ll.data)
        assert_allclose(fused.lh.data, bands.lh.data, atol=1e-15)
        assert_allclose(fused.hl.data, bands.hl.data, atol=1e-15)
        assert_allclose(fused.hh.data, bands.hh.data, atol=1e-15)

    def test_output_shape(self):
        """Test the prior-guided block output shape."""
        self.assertEqual(self.block(self.x, self.prior).shape, self.x.shape)

    def test_prior_pooled_to_working_resolution(self):
        """Test that the prior is pooled to the working resolution."""
        pooled = match_resolution(self.prior, 4, 4)
        self.assertEqual(pooled.shape, (2, PRIOR_CHANNELS, 4, 4))
        assert_allclose(pooled.data[0, 0, 0, 0], self.prior.data[0, 0, :2, :2].mean())
        with self.assertRaises(DimensionError):
            match_resolution(self.prior, 3, 3)

    def test_wrong_channels_rejected(self):
        """Test that a prior with the wrong channel count is rejected."""
        with self.assertRaises(DimensionError):
            self.block(Tensor(np.zeros((1, CHANNELS + 4, 8, 8))), self.prior)

    def test_gradients(self):
        """Test prior-guided block gradients against central differences."""
        x = Parameter(self.x.data, dtype=np.float64)
        prior = Parameter(self.prior.data, dtype=np.float64)
        direction = Tensor(self.rng.standard_normal(x.shape))
        self.assertGradcheck(lambda: projected_loss(self.block(x, prior), direction),
                             [x, prior] + self.block.parameters())


class TestHFEM(GradcheckMixin, unittest.TestCase):
    """The prior-refining U-Net."""

    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.x = Tensor(self.rng.standard_normal((1, PRIOR_CHANNELS, 8, 8)))

    def test_shape_preserved(self):
        """Test HFEM output shape."""
        hfem = HFEM(PRIOR_CHANNELS, 4, self.rng, dtype=np.float64)
        self.assertEqual(hfem(self.x).shape, self.x.shape)
        self.assertEqual(hfem(Tensor(np.zeros((2, PRIOR_CHANNELS, 12, 16)))).shape, (2, PRIOR_CHANNELS, 12, 16))

    def test_zero_weights_without_skip(self):
        """Test that zero weights without the skip give zero output."""
        hfem = HFEM(PRIOR_CHANNELS, 4, self.rng, identity_skip=False, dtype=np.float64)
        zero_module(hfem)
        assert_array_equal(hfem(self.x).data, 0.0)

    def test_zero_weights_with_skip_is_identity(self):
        """Test that zero weights with the skip give the identity."""
        hfem = HFEM(PRIOR_CHANNELS, 4, self.rng, dtype=np.float64)
        zero_module(hfem)
        assert_array_equal(hfem(self.x).data, self.x.data)

    def test_indivisible_extent_rejected(self):
        """Test that extents not divisible by four are rejected."""
        hfem = HFEM(PRIOR_CHANNELS, 4, self.rng)
        with self.assertRaises(DimensionError):
            hfem(Tensor(np.zeros((1, PRIOR_CHANNELS, 6, 8), dtype=np.float32)))

    def test_gradients(self):
        """Test HFEM gradients against central differences."""
        hfem = HFEM(PRIOR_CHANNELS, 2, self.rng, dtype=np.float64)
        x = Parameter(self.x.data, dtype=np.float64)
        direction = Tensor(self.rng.standard_normal(x.shape))
        self.assertGradcheck(lambda: projected_loss(hfem(x), direction), [x] + hfem.parameters())


class TestFABlock(GradcheckMixin, unittest.TestCase):
    """DFEB + PGB with the residual wrap."""

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.x = Tensor(self.rng.standard_normal((1, CHANNELS, 8, 8)))
        self.prior = Tensor(self.rng.standard_normal((1, PRIOR_CHANNELS, 8, 8)))

    def test_zero_weights_give_identity(self):
        """Test that a zeroed FA-Block is the identity."""
        block = FABlock(CHANNELS, toy_config(), self.rng, dtype=np.float64)
        zero_module(block)
        assert_array_equal(block(self.x, self.prior).data, self.x.data)

    def test_shape_preserved(self):
        """Test FA-Block output shape."""
        block = FABlock(CHANNELS, toy_config(), self.rng, dtype=np.float64)
        self.assertEqual(block(self.x, self.prior).shape, self.x.shape)

    def test_without_prior_path(self):
        """Test the FA-Block without the prior path."""
        block = FABlock(CHANNELS, toy_config(use_pgb=False), self.rng, dtype=np.float64)
        self.assertIsNone(block.pgb)
        assert_allclose(block(self.x, self.prior).data, self.x.data + block.dfeb(self.x).data)

    def test_gradients(self):
        """Test FA-Block gradients against central differences."""
        block = FABlock(CHANNELS, toy_config(), self.rng, dtype=np.float64)
        x = Parameter(self.x.data, dtype=np.float64)
        prior = Parameter(self.prior.data, dtype=np.float64)
        direction = Tensor(self.rng.standard_normal(x.shape))
        self.assertGradcheck(lambda: projected_loss(block(x, prior), direction), [x, prior] + block.parameters())

    def test_flops_positive_and_grow_with_area(self):
        """Test that FA-Block flops are positive and grow with area."""
        block = FABlock(CHANNELS, toy_config(), self.rng)
        self.assertGreater(block.flops(8, 8), 0)
        self.assertGreater(block.flops(16, 16), block.flops(8, 8))


if __name__ == '__main__':
    unittest.main()
