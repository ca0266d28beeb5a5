# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from ftn_cll.exceptions import DimensionError, ImageFormatError, MissingFileError
from ftn_cll.ftn_cll.tensor_core.tensor_core import Tensor
from ftn_cll.utils import get_logger, throw

logger = get_logger("image_io")

# Pillow registers binary PGM under the PPM plugin
FORMATS = {".png": "PNG", ".pgm": "PPM"}
MODES = {"L": 1, "RGB": 3}


def image_format(path):
	ext = os.path.splitext(path)[1].lower()
	if ext not in FORMATS:
		throw(f"Unsupported image extension '{ext}' for {path}; use .png or .pgm", ImageFormatError)
	return FORMATS[ext]


def read_image(path):
	"""(1, C, H, W) float32 tensor in [0, 1] from an 8-bit grayscale/RGB PNG or a P5 PGM."""
	if not os.path.exists(path):
		throw(f"Image {path} does not exist", MissingFileError)
	image_format(path)
	try:
		with Image.open(path) as image:
			if image.format not in FORMATS.values():
				throw(f"{path}: {image.format} images are not supported", ImageFormatError)
			if image.mode not in MODES:
				throw(f"{path}: mode {image.mode} is not 8-bit grayscale or RGB", ImageFormatError)
			if image.format == "PPM" and image.mode != "L":
				throw(f"{path}: only binary graymaps (P5) are read", ImageFormatError)
			pixels = np.asarray(image, dtype=np.uint8)
	except (UnidentifiedImageError, OSError) as e:
		throw(f"{path}: not a readable image ({e})", ImageFormatError)
	if pixels.ndim == 2:
		pixels = pixels[None]
	else:
		pixels = pixels.transpose(2, 0, 1)
	return Tensor((pixels.astype(np.float32) / 255.0)[None])


def to_pixels(data):
	"""Clamp to [0, 1] and round half-to-even onto 0..255."""
	return np.rint(np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(tensor, path):
	data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
	if data.ndim == 4:
		if data.shape[0] != 1:
			throw(f"write_image takes one image, got a batch of {data.shape[0]}", DimensionError)
		data = data[0]
	if data.ndim == 2:
		data = data[None]
	if data.ndim != 3 or data.shape[0] not in MODES.values():
		throw(f"write_image needs 1 or 3 channels (C, H, W), got dims {data.shape}", ImageFormatError)
	fmt = image_format(path)
	if fmt == "PPM" and data.shape[0] != 1:
		throw(f"{path}: PGM output must be grayscale", ImageFormatError)
	pixels = to_pixels(data)
	if pixels.shape[0] == 1:
		image = Image.fromarray(pixels[0])
	else:
		image = Image.fromarray(np.ascontiguousarray(pixels.transpose(1, 2, 0)))
	os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
	image.save(path, format=fmt)
	logger.debug("Wrote %s (%dx%d, %d channels)", path, pixels.shape[2], pixels.shape[1], pixels.shape[0])
