"""
Unit tests for synthetic image pairs and image I/O.
"""

import os
import shutil
import tempfile
import unittest
from dataclasses import replace

import numpy as np
from numpy.testing import assert_array_equal

from models.restoration import DegradeKind, DegradeSpec
from services import datasynth
from services.loss import psnr
from services.numerics import Tensor
from utils.errors import ConfigError, DimensionError, ImageIOError
from utils.helpers import ImageIO


class TestGenerateClean(unittest.TestCase):
    """Procedural clean images."""

    def test_same_seed_is_bit_identical(self):
        """Test that the same seed gives the same clean image."""
        assert_array_equal(datasynth.generate_clean(3, 32, 48).data, datasynth.generate_clean(3, 32, 48).data)

    def test_range_and_shape(self):
        """Test clean image range and shape."""
        image = datasynth.generate_clean(4, 24, 40).data
        self.assertEqual(image.shape, (1, 3, 24, 40))
        self.assertGreaterEqual(float(image.min()), 0.0)
        self.assertLessEqual(float(image.max()), 1.0)

    def test_distinct_seeds_differ(self):
        """Test that distinct seeds give distinct images."""
        a = datasynth.generate_clean(1, 32, 32).data
        b = datasynth.generate_clean(2, 32, 32).data
        self.assertGreaterEqual(np.mean(a != b), 0.01)

    def test_has_edges(self):
        """Test that clean images contain sharp edges."""
        image = datasynth.generate_clean(5, 64, 64).data[0]
        self.assertGreater(float(np.max(np.abs(np.diff(image, axis=2)))), 0.1)

    def test_bad_extent(self):
        """Test that an empty extent is rejected."""
        with self.assertRaises(DimensionError):
            datasynth.generate_clean(0, 0, 8)


class TestDegrade(unittest.TestCase):
    """Rain and snow overlays."""

    def setUp(self):
        self.clean = datasynth.generate_clean(11, 64, 64)

    def test_zero_density_is_identity(self):
        """Test that zero density returns an unchanged copy."""
        for kind in DegradeKind:
            out = datasynth.degrade(self.clean, DegradeSpec(kind=kind, density=0.0))
            assert_array_equal(out.data, self.clean.data)
            self.assertIsNot(out.data, self.clean.data)

    def test_positive_density_degrades(self):
        """Test that positive density degrades the image."""
        for kind in DegradeKind:
            out = datasynth.degrade(self.clean, DegradeSpec(kind=kind, density=0.3, seed=2))
            value = psnr(out, self.clean)
            self.assertTrue(np.isfinite(value))
            self.assertEqual(out.shape, self.clean.shape)

    def test_small_density_still_degrades(self):
        """Test that a very small density still adds a particle."""
        clean = datasynth.generate_clean(1, 32, 32)
        for kind in DegradeKind:
            out = datasynth.degrade(clean, DegradeSpec(kind=kind, density=0.01, seed=3))
            self.assertTrue(np.isfinite(psnr(out, clean)), kind)

    def test_particle_count(self):
        """Test how many particles each density draws."""
        self.assertEqual(datasynth.particle_count(0.0, 32), 0)
        self.assertEqual(datasynth.particle_count(0.01, 32), 1)
        self.assertEqual(datasynth.particle_count(0.3, 32), 10)
        self.assertEqual(datasynth.particle_count(0.1, 30), 3)
        self.assertEqual(datasynth.particle_count(1.0, 32), 32)

    def test_density_monotone(self):
        """Test that PSNR falls as density rises."""
        for kind in DegradeKind:
            values = [psnr(datasynth.degrade(self.clean, DegradeSpec(kind=kind, density=d, seed=5)), self.clean)
                      for d in (0.1, 0.3, 0.5)]
            self.assertGreater(values[0], values[1])
            self.assertGreater(values[1], values[2])

    def test_denser_adds_to_sparser(self):
        """Test that denser overlays contain the sparser ones."""
        sparse = datasynth.degrade(self.clean, DegradeSpec(density=0.2, seed=9)).data
        dense = datasynth.degrade(self.clean, DegradeSpec(density=0.6, seed=9)).data
        self.assertTrue(np.all(dense >= sparse - 1e-6))

    def test_stays_in_unit_range(self):
        """Test that overlays stay inside the unit range."""
        spec = DegradeSpec(kind=DegradeKind.SNOW, density=1.0, intensity=1.0, particle_radius=3.0, seed=1)
        out = datasynth.degrade(self.clean, spec).data
        self.assertGreaterEqual(float(out.min()), 0.0)
        self.assertLessEqual(float(out.max()), 1.0)

    def test_preserves_dtype(self):
        """Test that degradation keeps the input dtype."""
        clean64 = Tensor(self.clean.data.astype(np.float64))
        self.assertEqual(datasynth.degrade(clean64, DegradeSpec(seed=1)).dtype, np.float64)

    def test_invalid_spec(self):
        """Test rejection of bad specs and wrong channel counts."""
        with self.assertRaises(ConfigError):
            datasynth.degrade(self.clean, DegradeSpec(density=1.5))
        with self.assertRaises(DimensionError):
            datasynth.degrade(Tensor(np.zeros((1, 1, 8, 8))), DegradeSpec())


class TestDataset(unittest.TestCase):
    """Pair lists, manifests and PNG files."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_dataset_is_deterministic(self):
        """Test that the dataset is deterministic for a seed."""
        a = datasynth.make_dataset(3, 16, 16, DegradeSpec(), seed=4)
        b = datasynth.make_dataset(3, 16, 16, DegradeSpec(), seed=4)
        self.assertEqual(len(a), 3)
        for (ca, da), (cb, db) in zip(a, b):
            assert_array_equal(ca.data, cb.data)
            assert_array_equal(da.data, db.data)

    def test_pairs_use_distinct_seeds(self):
        """Test that pairs use distinct seeds."""
        ((c0, _), (c1, _)) = datasynth.make_dataset(2, 16, 16, DegradeSpec(), seed=4)
        self.assertFalse(np.array_equal(c0.data, c1.data))

    def test_every_pair_honours_degrade_contract(self):
        """Test that every pair obeys the degrade contract."""
        for clean, degraded in datasynth.make_dataset(4, 16, 16, DegradeSpec(kind=DegradeKind.SNOW), seed=1):
            self.assertEqual(clean.shape, degraded.shape)
            self.assertTrue(np.all((degraded.data >= 0) & (degraded.data <= 1)))

    def test_empty_dataset_rejected(self):
        """Test that an empty dataset is rejected."""
        with self.assertRaises(DimensionError):
            datasynth.make_dataset(0, 16, 16, DegradeSpec(), seed=0)

    def test_write_and_read_manifest(self):
        """Test writing a dataset and reading its manifest back."""
        template = DegradeSpec(kind=DegradeKind.SNOW, density=0.4, particle_radius=2.0)
        manifest = datasynth.write_dataset(3, 16, 24, template, 6, self.test_dir)
        self.assertEqual(os.path.basename(manifest), datasynth.MANIFEST_NAME)
        records = datasynth.read_manifest(manifest)
        self.assertEqual([r.index for r in records], [0, 1, 2])
        for record in records:
            self.assertTrue(os.path.isfile(record.clean_path))
            self.assertEqual(record.spec, replace(template, seed=record.spec.seed))

        pairs = datasynth.load_pairs(records)
        expected = datasynth.make_dataset(3, 16, 24, template, 6)
        for (clean, degraded), (ref_clean, ref_degraded) in zip(pairs, expected):
            assert_array_equal(ImageIO.quantize(clean.data), ImageIO.quantize(ref_clean.data))
            assert_array_equal(ImageIO.quantize(degraded.data), ImageIO.quantize(ref_degraded.data))

    def test_malformed_manifest(self):
        """Test malformed and missing manifests."""
        path = os.path.join(self.test_dir, 'manifest.txt')
        with open(path, 'w') as f:
            f.write("0\tclean.png\n")
        with self.assertRaises(ImageIOError):
            datasynth.read_manifest(path)
        with open(path, 'w') as f:
            f.write("0\ta.png\tb.png\tkind=hail density=0.1\n")
        with self.assertRaises(ImageIOError):
            datasynth.read_manifest(path)
        with self.assertRaises(ImageIOError):
            datasynth.read_manifest(os.path.join(self.test_dir, 'absent.txt'))


class TestImageIO(unittest.TestCase):
    """8-bit PNG round trips."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_png_round_trip(self):
        """Test an 8-bit PNG round trip."""
        pixels = np.random.default_rng(0).integers(0, 256, size=(1, 3, 8, 12))
        image = pixels.astype(np.float64) / 255.0
        path = os.path.join(self.test_dir, 'nested', 'image.png')
        ImageIO.save_png(image, path)
        loaded = ImageIO.load_png(path, np.float64)
        self.assertEqual(loaded.shape, (1, 3, 8, 12))
        assert_array_equal(np.rint(loaded * 255.0), pixels)

    def test_quantize_rounds_half_up_and_clips(self):
        """Test quantization rounding and clipping."""
        image = np.array([0.5, 1.49 / 255, -0.2, 1.7]).reshape(1, 1, 2, 2).repeat(3, axis=1)
        assert_array_equal(ImageIO.quantize(image)[..., 0], [[128, 1], [0, 255]])

    def test_missing_and_invalid_files(self):
        """Test missing and invalid image files."""
        with self.assertRaises(ImageIOError):
            ImageIO.load_png(os.path.join(self.test_dir, 'absent.png'))
        path = os.path.join(self.test_dir, 'junk.png')
        with open(path, 'wb') as f:
            f.write(b'not an image')
        with self.assertRaises(ImageIOError):
            ImageIO.load_png(path)

    def test_band_display(self):
        """Test band display scaling."""
        band = np.array([-3.0, 0.0, 1.0, 4.0])
        assert_array_equal(ImageIO.band_to_display(band, True), [0.0, 0.5, 1.0, 1.0])
        assert_array_equal(ImageIO.band_to_display(band, False, gain=4.0), [0.0, 0.0, 0.25, 1.0])


if __name__ == '__main__':
    unittest.main()
