# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

import copy
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from ftn_cll import hooks
from ftn_cll.exceptions import ConfigurationError, DimensionError, ValidationError
from ftn_cll.ftn_cll.tensor_core.tensor_core import (
	Tensor,
	active_tape,
	add,
	blend,
	check_alpha,
	conv2d,
	mac_scope,
	prelu,
	validate_finite,
)
from ftn_cll.utils import get_attr, seeded_rng, throw

# fixed slope of the main network's activations; never trained
MAIN_SLOPE = 0.2
# generator stream used for parameter initialisation
INIT_STREAM = 0
TAIL_INIT_SCALE = 0.1
PHASES = ("main", "tuning", "inference")


@dataclass
class FilterBank:
	weight: Tensor
	bias: Tensor

	def __post_init__(self):
		self.validate()

	def validate(self):
		dims = self.weight.dims
		if len(dims) != 4:
			throw(f"FilterBank weight must be (C_out, C_in, K_H, K_W), got {dims}", DimensionError)
		if min(dims) < 1:
			throw(f"FilterBank extents must be at least 1, got {dims}", DimensionError)
		if dims[2] % 2 == 0 or dims[3] % 2 == 0:
			throw(f"FilterBank kernel extents must be odd, got {dims[2:]}", DimensionError)
		if self.bias.dims != (dims[0],):
			throw(f"FilterBank bias dims {self.bias.dims} do not match C_out={dims[0]}", DimensionError)

	@property
	def shape(self):
		return self.weight.dims

	@classmethod
	def from_arrays(cls, weight, bias, requires_grad=False, name=None):
		return cls(
			Tensor(np.array(weight), requires_grad=requires_grad, name=f"{name}.weight" if name else None),
			Tensor(np.array(bias), requires_grad=requires_grad, name=f"{name}.bias" if name else None),
		)

	def arrays(self):
		return self.weight.data, self.bias.data


@dataclass
class NetworkSpec:
	channels: int = 16
	num_blocks: int = 4
	kernel_size: int = 3
	in_channels: int = 1
	out_channels: int = 1

	def __post_init__(self):
		self.validate()

	def validate(self):
		for key in ("channels", "kernel_size", "in_channels", "out_channels"):
			if getattr(self, key) <= 0:
				throw(f"NetworkSpec.{key} must be positive, got {getattr(self, key)}", ConfigurationError)
		if self.num_blocks < 0:
			throw(f"NetworkSpec.num_blocks must not be negative, got {self.num_blocks}", ConfigurationError)
		if self.kernel_size % 2 == 0:
			throw(f"NetworkSpec.kernel_size must be odd, got {self.kernel_size}", ConfigurationError)
		if self.in_channels != self.out_channels:
			throw("The global skip needs in_channels == out_channels", ConfigurationError)

	def layer_names(self):
		names = ["head"]
		for i in range(self.num_blocks):
			names += [f"blocks.{i}.conv1", f"blocks.{i}.conv2"]
		return [*names, "tail"]

	def layer_shapes(self):
		k, c = self.kernel_size, self.channels
		shapes = OrderedDict()
		for name in self.layer_names():
			if name == "head":
				shapes[name] = (c, self.in_channels, k, k)
			elif name == "tail":
				shapes[name] = (self.out_channels, c, k, k)
			else:
				shapes[name] = (c, c, k, k)
		return shapes

	def parameter_count(self):
		return sum(int(np.prod(shape)) + shape[0] for shape in self.layer_shapes().values())

	def as_dict(self):
		return asdict(self)

	@classmethod
	def from_config(cls, config):
		return cls(
			channels=config.channels,
			num_blocks=config.num_blocks,
			kernel_size=config.kernel_size,
			in_channels=config.image_channels,
			out_channels=config.image_channels,
		)


class LayerProvider:
	"""Supplies the filters one convolution layer runs with at a given level."""

	mode = "plain"

	def __init__(self, name, base):
		self.name = name
		self.base = base
		self._cache = {}

	def compute_filters(self, alpha, strict=True, allow_extrapolation=False):
		return self.base

	def effective_filters(self, alpha, strict=True, allow_extrapolation=False):
		# cached banks carry no tape history, so the cache is bypassed while recording
		recording = active_tape() is not None
		# the range policy is per call, so it runs before the cache is consulted
		alpha = check_alpha(alpha, strict=strict, allow_extrapolation=allow_extrapolation)
		key = float(alpha)
		if not recording and key in self._cache:
			return self._cache[key]
		bank = self.compute_filters(alpha, strict=strict, allow_extrapolation=allow_extrapolation)
		if bank.shape != self.base.shape:
			throw(f"{self.name}: provider changed filter dims {self.base.shape} -> {bank.shape}", DimensionError)
		if not recording:
			self._cache[key] = bank
		return bank

	def level_filters(self):
		"""Filters at both trained levels, used for pixel-adaptive control."""
		return self.effective_filters(0.0), self.effective_filters(1.0)

	def parameters(self):
		return []

	def invalidate(self):
		self._cache.clear()


class PlainProvider(LayerProvider):
	mode = "plain"


class Network:
	def __init__(self, spec, banks):
		self.spec = spec
		self.providers = OrderedDict((name, PlainProvider(name, banks[name])) for name in spec.layer_names())
		self.tuning = None
		self.validate()

	def validate(self):
		for name, shape in self.spec.layer_shapes().items():
			if self.providers[name].base.shape != shape:
				throw(f"{name}: filter dims {self.providers[name].base.shape}, expected {shape}", DimensionError)

	@property
	def layer_names(self):
		return list(self.providers)

	def bank(self, name):
		return self.providers[name].base

	def attach(self, name, provider):
		if name not in self.providers:
			throw(f"Unknown layer '{name}'", ConfigurationError)
		self.providers[name] = provider

	def detach_all(self):
		for name in self.layer_names:
			self.providers[name] = PlainProvider(name, self.bank(name))
		self.tuning = None

	def tuned_providers(self):
		return [p for p in self.providers.values() if p.mode != "plain"]

	def invalidate(self):
		for provider in self.providers.values():
			provider.invalidate()

	def set_phase(self, phase):
		if phase not in PHASES:
			throw(f"Unknown phase '{phase}'", ConfigurationError)
		for provider in self.providers.values():
			provider.base.weight.requires_grad = phase == "main"
			provider.base.bias.requires_grad = phase == "main"
			for _, param in provider.parameters():
				param.requires_grad = phase == "tuning"
		self.invalidate()

	def conv(self, name, x, level, strict=True, allow_extrapolation=False):
		provider = self.providers[name]
		with mac_scope(name):
			if is_global_level(level):
				bank = provider.effective_filters(level, strict=strict, allow_extrapolation=allow_extrapolation)
				return conv2d(x, bank.weight, bank.bias)
			if provider.mode == "plain":
				return conv2d(x, provider.base.weight, provider.base.bias)
			first, second = provider.level_filters()
			alpha = level.as_alpha(x.dims[2], x.dims[3])
			return blend(conv2d(x, first.weight, first.bias), conv2d(x, second.weight, second.bias), alpha)

	def forward(self, image, level=0.0, strict=True, allow_extrapolation=False):
		x = image if isinstance(image, Tensor) else Tensor(image)
		if x.data.ndim != 4 or x.dims[1] != self.spec.in_channels:
			throw(f"Expected an image batch (N, {self.spec.in_channels}, H, W), got {x.dims}", DimensionError)
		validate_finite(x, "network input")
		if not is_global_level(level):
			if not hasattr(level, "as_alpha"):
				throw(f"Level must be a number or a level map, got {type(level).__name__}", ConfigurationError)
			if tuple(level.shape) != tuple(x.dims[2:]):
				throw(f"Level map dims {tuple(level.shape)} do not match image dims {x.dims[2:]}", DimensionError)

		def conv(name, inp):
			return self.conv(name, inp, level, strict=strict, allow_extrapolation=allow_extrapolation)

		h = conv("head", x)
		for i in range(self.spec.num_blocks):
			r = conv(f"blocks.{i}.conv1", h)
			r = prelu(r, MAIN_SLOPE)
			r = conv(f"blocks.{i}.conv2", r)
			h = add(h, r)
		return add(x, conv("tail", h))

	__call__ = forward

	def main_store(self):
		store = OrderedDict()
		for name, provider in self.providers.items():
			store[f"{name}.weight"] = provider.base.weight.data
			store[f"{name}.bias"] = provider.base.bias.data
		return store

	def tuning_store(self):
		store = OrderedDict()
		for name, provider in self.providers.items():
			for pname, param in provider.parameters():
				store[f"tuning.{name}.{pname}"] = param.data
		return store

	def state_dict(self):
		store = self.main_store()
		store.update(self.tuning_store())
		return store

	def load_state_dict(self, store, strict=True):
		expected = self.state_dict()
		if strict and set(store) != set(expected):
			missing = sorted(set(expected) - set(store))
			extra = sorted(set(store) - set(expected))
			throw(f"Parameter names differ: missing {missing}, unexpected {extra}", ValidationError)
		staged = []
		for name, value in store.items():
			if name not in expected:
				continue
			target = expected[name]
			value = np.asarray(value)
			if value.size != target.size:
				throw(f"{name}: stored dims {value.shape} do not match {target.shape}", DimensionError)
			validate_finite(value, name)
			staged.append((target, value))
		# nothing is written unless every entry passed
		for target, value in staged:
			target[...] = value.reshape(target.shape)
		self.invalidate()

	def copy(self):
		return copy.deepcopy(self)


def is_global_level(level):
	return isinstance(level, (int, float, np.integer, np.floating))


def build_network(spec, seed=0):
	"""Fan-in scaled normal init from the seeded generator; biases start at zero."""
	rng = seeded_rng(seed, INIT_STREAM)
	gain = np.sqrt(2.0 / (1.0 + MAIN_SLOPE**2))
	banks = {}
	for name, shape in spec.layer_shapes().items():
		fan_in = shape[1] * shape[2] * shape[3]
		std = gain / np.sqrt(fan_in)
		if name == "tail":
			std *= TAIL_INIT_SCALE
		weight = (rng.standard_normal(shape) * std).astype(np.float32)
		banks[name] = FilterBank.from_arrays(weight, np.zeros(shape[0], dtype=np.float32), name=name)
	return Network(spec, banks)


def collect_parameters(net, phase):
	"""Named trainable parameters of a phase; the two phases never share a tensor."""
	if phase == "main":
		params = []
		for name, provider in net.providers.items():
			params += [(f"{name}.weight", provider.base.weight), (f"{name}.bias", provider.base.bias)]
		return params
	if phase == "tuning":
		params = [
			(f"tuning.{name}.{pname}", param)
			for name, provider in net.providers.items()
			for pname, param in provider.parameters()
		]
		if not params:
			throw("Tuning phase requested but no tuning providers are attached", ConfigurationError)
		return params
	throw(f"Unknown phase '{phase}'", ConfigurationError)


def attach_providers(net, mode, groups=None, depth=None, exclude_last=False):
	"""Attach the providers a tuning mode names in `hooks.tuning_modes`."""
	if mode not in hooks.tuning_modes:
		throw(f"Unknown tuning mode '{mode}'", ConfigurationError)
	info = dict(hooks.tuning_modes[mode])
	if info.get("provider") is None:
		throw(f"Mode '{mode}' trains the main network and attaches no providers", ConfigurationError)
	if mode == "ftn":
		info["groups"] = groups or info["groups"]
		info["depth"] = depth or info["depth"]
	attacher = get_attr(hooks.provider_attachers[info["provider"]])
	attacher(net, groups=info.get("groups"), depth=info.get("depth"), exclude_last=exclude_last)
	net.tuning = {
		"mode": mode,
		"provider": info["provider"],
		"groups": info.get("groups"),
		"depth": info.get("depth"),
		"exclude_last": bool(exclude_last),
	}
	return net
