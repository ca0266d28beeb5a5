# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

import math
from dataclasses import dataclass

import numpy as np

from ftn_cll.exceptions import ConfigurationError, DimensionError, RangeError
from ftn_cll.ftn_cll.network.network import FilterBank, LayerProvider
from ftn_cll.ftn_cll.tensor_core.tensor_core import (
	Tensor,
	blend,
	check_alpha,
	grouped_pointwise_conv,
	permute,
	prelu,
)
from ftn_cll.utils import get_logger, throw

logger = get_logger("filter_transition")

# (C_out, C_in, K_H, K_W) <-> (C_in, C_out, K_H, K_W): filter index becomes the channel axis
FILTER_AXES = (1, 0, 2, 3)


@dataclass
class FtnConfig:
	groups: int = 1
	depth: int = 2

	def validate(self, channels=None):
		if self.groups <= 0:
			throw(f"FTN groups must be positive, got {self.groups}", ConfigurationError)
		if self.depth < 2:
			throw(f"FTN depth must be at least 2, got {self.depth}", ConfigurationError)
		if channels is not None and channels % self.groups:
			throw(f"FTN groups={self.groups} does not divide C_out={channels}", ConfigurationError)


class FtnLayer:
	"""Grouped 1x1 filter-space stages with a learnable PReLU slope between consecutive stages."""

	def __init__(self, channels, config=None):
		self.channels = channels
		self.config = config or FtnConfig()
		self.config.validate(channels)
		dtype = np.float32
		cg = channels // self.config.groups
		self.weights = [Tensor(np.zeros((channels, cg), dtype=dtype)) for _ in range(self.config.depth)]
		self.biases = [Tensor(np.zeros(channels, dtype=dtype)) for _ in range(self.config.depth)]
		self.slopes = [Tensor(np.ones((), dtype=dtype)) for _ in range(self.config.depth - 1)]
		identity_init(self)

	@property
	def groups(self):
		return self.config.groups

	@property
	def depth(self):
		return self.config.depth

	def parameters(self):
		params = []
		for s in range(self.depth):
			params += [(f"stage{s}.weight", self.weights[s]), (f"stage{s}.bias", self.biases[s])]
		params += [(f"slope{s}", slope) for s, slope in enumerate(self.slopes)]
		return params

	def is_identity(self):
		eye = identity_weights(self.channels, self.groups)
		return (
			all(np.array_equal(w.data, eye) for w in self.weights)
			and all(not np.any(b.data) for b in self.biases)
			and all(float(s.data) == 1.0 for s in self.slopes)
		)


def identity_weights(channels, groups):
	"""(C, C/G) weights whose every group block is the identity."""
	cg = channels // groups
	return np.tile(np.eye(cg, dtype=np.float32), (groups, 1))


def identity_init(layer):
	eye = identity_weights(layer.channels, layer.groups)
	for weight in layer.weights:
		weight.data[...] = eye
	for bias in layer.biases:
		bias.data[...] = 0
	for slope in layer.slopes:
		slope.data[...] = 1


def ftn_forward(layer, bank):
	"""Transform a filter bank; the bias passes through untouched."""
	c_out = bank.shape[0]
	if c_out != layer.channels:
		throw(f"FTN built for C_out={layer.channels}, got filter bank {bank.shape}", DimensionError)
	if c_out % layer.groups:
		throw(f"FTN groups={layer.groups} does not divide C_out={c_out}", ConfigurationError)
	x = permute(bank.weight, FILTER_AXES)
	for s in range(layer.depth):
		x = grouped_pointwise_conv(x, layer.weights[s], layer.biases[s], layer.groups)
		if s < layer.depth - 1:
			x = prelu(x, layer.slopes[s])
	return FilterBank(permute(x, FILTER_AXES), bank.bias)


def effective_filters(layer, bank, alpha, second_bias=None, strict=True, allow_extrapolation=False):
	"""f * (1 - alpha) + FTN(f) * alpha, with the bias blended towards `second_bias`."""
	alpha = check_alpha(alpha, strict=strict, allow_extrapolation=allow_extrapolation)
	if alpha == 0:
		return bank
	transformed = ftn_forward(layer, bank)
	weight = blend(bank.weight, transformed.weight, alpha, allow_extrapolation=True)
	bias = bank.bias if second_bias is None else blend(bank.bias, second_bias, alpha, allow_extrapolation=True)
	return FilterBank(weight, bias)


class FtnProvider(LayerProvider):
	mode = "ftn"

	def __init__(self, name, base, config=None):
		super().__init__(name, base)
		config = config or FtnConfig()
		c_out = base.shape[0]
		# layers with fewer filters than groups (the image-channel tail) fall back to gcd(G, C_out)
		groups = math.gcd(config.groups, c_out)
		if groups != config.groups:
			logger.debug("%s: %d filters, FTN groups %d -> %d", name, c_out, config.groups, groups)
		self.layer = FtnLayer(c_out, FtnConfig(groups=groups, depth=config.depth))
		self.second_bias = Tensor(np.array(base.bias.data))

	def compute_filters(self, alpha, strict=True, allow_extrapolation=False):
		return effective_filters(
			self.layer, self.base, alpha, self.second_bias, strict=strict, allow_extrapolation=allow_extrapolation
		)

	def parameters(self):
		return [*self.layer.parameters(), ("second_bias", self.second_bias)]


def attach_ftn(net, groups=1, depth=2, exclude_last=False):
	config = FtnConfig(groups=groups or 1, depth=depth or 2)
	config.validate()
	last = net.layer_names[-1]
	for name in net.layer_names:
		if exclude_last and name == last:
			continue
		net.attach(name, FtnProvider(name, net.bank(name), config))
	return net


class LevelMap:
	"""Per-pixel blend coefficients A in [0, 1]^(H x W)."""

	def __init__(self, values):
		self.values = np.asarray(values, dtype=np.float64)
		self.validate()

	def validate(self):
		if self.values.ndim != 2:
			throw(f"Level map must be 2-D (H, W), got dims {self.values.shape}", DimensionError)
		if not np.all(np.isfinite(self.values)) or self.values.min() < 0 or self.values.max() > 1:
			throw("Level map entries must lie in [0, 1]", RangeError)

	@property
	def shape(self):
		return self.values.shape

	@classmethod
	def constant(cls, height, width, value):
		return cls(np.full((height, width), float(value)))

	@classmethod
	def ramp(cls, height, width):
		"""0 at the left edge to 1 at the right edge."""
		row = np.linspace(0.0, 1.0, width) if width > 1 else np.zeros(1)
		return cls(np.tile(row, (height, 1)))

	@classmethod
	def split(cls, height, width, left=0.0, right=1.0):
		values = np.full((height, width), float(left))
		values[:, width // 2 :] = right
		return cls(values)

	@classmethod
	def from_image(cls, image):
		data = image.data if isinstance(image, Tensor) else np.asarray(image)
		if data.ndim == 4:
			if data.shape[0] != 1 or data.shape[1] != 1:
				throw(f"Level map image must be one grayscale image, got dims {data.shape}", DimensionError)
			data = data[0, 0]
		return cls(np.clip(data, 0.0, 1.0))

	def resample(self, height, width):
		"""Nearest-neighbour resampling; identity when the size already matches."""
		h, w = self.shape
		if (h, w) == (height, width):
			return self.values
		rows = np.minimum((np.arange(height) + 0.5) * h / height, h - 1).astype(int)
		cols = np.minimum((np.arange(width) + 0.5) * w / width, w - 1).astype(int)
		return self.values[np.ix_(rows, cols)]

	def as_alpha(self, height, width):
		return self.resample(height, width).reshape(1, 1, height, width)


def pixel_adaptive_forward(net, image, level_map, strict=True):
	"""Per layer (1 - A) * (X * f) + A * (X * FTN(f)), with A broadcast over channels."""
	if not isinstance(level_map, LevelMap):
		level_map = LevelMap(level_map)
	return net.forward(image, level_map, strict=strict)
