# Copyright (c) 2026, FTN-CLL contributors
# See license.txt

import os
import shutil
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_array_equal
from PIL import Image

from ftn_cll.exceptions import DimensionError, ImageFormatError, MissingFileError
from ftn_cll.ftn_cll.image_io.image_io import read_image, to_pixels, write_image


class TestImageIo(unittest.TestCase):
	def setUp(self):
		self.tmp = tempfile.mkdtemp()
		self.rng = np.random.default_rng(9)

	def tearDown(self):
		shutil.rmtree(self.tmp)

	def path(self, name):
		return os.path.join(self.tmp, name)

	def test_quantization(self):
		assert_array_equal(to_pixels([0.0, 0.5, 1.0, 1.3, -0.2]), [0, 128, 255, 255, 0])

	def test_png_roundtrip_error_is_half_a_step(self):
		image = self.rng.uniform(size=(1, 1, 9, 7))
		write_image(image, self.path("a.png"))
		restored = read_image(self.path("a.png"))
		self.assertEqual(restored.dims, (1, 1, 9, 7))
		self.assertLessEqual(np.abs(restored.data - image).max(), 1 / 510 + 1e-7)

	def test_rgb_png(self):
		image = self.rng.uniform(size=(3, 4, 5))
		write_image(image, self.path("rgb.png"))
		restored = read_image(self.path("rgb.png"))
		self.assertEqual(restored.dims, (1, 3, 4, 5))
		assert_array_equal(to_pixels(restored.data[0]), to_pixels(image))

	def test_pgm_bytes_are_stable(self):
		write_image(self.rng.uniform(size=(6, 6)), self.path("a.pgm"))
		write_image(read_image(self.path("a.pgm")), self.path("b.pgm"))
		with open(self.path("a.pgm"), "rb") as a, open(self.path("b.pgm"), "rb") as b:
			first = a.read()
			self.assertEqual(first, b.read())
		self.assertTrue(first.startswith(b"P5"))

	def test_pgm_must_be_grayscale(self):
		with self.assertRaises(ImageFormatError):
			write_image(np.zeros((3, 4, 4)), self.path("c.pgm"))

	def test_sixteen_bit_is_rejected(self):
		Image.fromarray(np.full((4, 4), 1000, dtype=np.uint16)).save(self.path("deep.png"))
		with self.assertRaises(ImageFormatError):
			read_image(self.path("deep.png"))

	def test_rgba_is_rejected(self):
		Image.fromarray(np.zeros((4, 4, 4), dtype=np.uint8)).save(self.path("alpha.png"))
		with self.assertRaises(ImageFormatError):
			read_image(self.path("alpha.png"))

	def test_corrupt_files_are_rejected(self):
		with open(self.path("noise.png"), "wb") as f:
			f.write(self.rng.integers(0, 256, size=200, dtype=np.uint8).tobytes())
		with open(self.path("broken.png"), "wb") as f:
			f.write(b"\x89PNG\r\n\x1a\n" + b"\xff" * 40)
		for name in ("noise.png", "broken.png"):
			with self.assertRaises(ImageFormatError):
				read_image(self.path(name))

	def test_unknown_extension(self):
		with self.assertRaises(ImageFormatError):
			write_image(np.zeros((4, 4)), self.path("a.jpg"))

	def test_batches_are_rejected(self):
		with self.assertRaises(DimensionError):
			write_image(np.zeros((2, 1, 4, 4)), self.path("a.png"))

	def test_missing_file(self):
		with self.assertRaises(MissingFileError):
			read_image(self.path("absent.png"))


if __name__ == "__main__":
	unittest.main()
