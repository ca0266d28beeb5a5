# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ftn_cll.exceptions import DimensionError, StoreIncompatibilityError
from ftn_cll.ftn_cll.filter_transition.filter_transition import FtnConfig, FtnLayer
from ftn_cll.ftn_cll.network.network import FilterBank, LayerProvider, build_network
from ftn_cll.ftn_cll.tensor_core.tensor_core import Tensor, blend, check_alpha, filter_affine
from ftn_cll.ftn_cll.training.training import PhaseTrainer
from ftn_cll.utils import get_logger, throw

logger = get_logger("baselines")


class AdaFmLayer:
	"""Depth-wise 1x1 transition on filters: per-output-channel scale and shift."""

	def __init__(self, channels):
		self.channels = channels
		self.scale = Tensor(np.ones(channels, dtype=np.float32))
		self.shift = Tensor(np.zeros(channels, dtype=np.float32))

	def parameters(self):
		return [("scale", self.scale), ("shift", self.shift)]

	def is_identity(self):
		return bool(np.all(self.scale.data == 1) and not np.any(self.shift.data))


def adafm_transform(layer, bank):
	if bank.shape[0] != layer.channels:
		throw(f"AdaFM built for C_out={layer.channels}, got filter bank {bank.shape}", DimensionError)
	return FilterBank(filter_affine(bank.weight, layer.scale, layer.shift), bank.bias)


def adafm_effective_filters(layer, bank, alpha, second_bias=None, strict=True, allow_extrapolation=False):
	"""blend(f, scale * f + shift, alpha), scale and shift broadcast per output channel."""
	alpha = check_alpha(alpha, strict=strict, allow_extrapolation=allow_extrapolation)
	if alpha == 0:
		return bank
	transformed = adafm_transform(layer, bank)
	weight = blend(bank.weight, transformed.weight, alpha, allow_extrapolation=True)
	bias = bank.bias if second_bias is None else blend(bank.bias, second_bias, alpha, allow_extrapolation=True)
	return FilterBank(weight, bias)


class AdaFmProvider(LayerProvider):
	mode = "adafm"

	def __init__(self, name, base):
		super().__init__(name, base)
		self.layer = AdaFmLayer(base.shape[0])
		self.second_bias = Tensor(np.array(base.bias.data))

	def compute_filters(self, alpha, strict=True, allow_extrapolation=False):
		return adafm_effective_filters(
			self.layer, self.base, alpha, self.second_bias, strict=strict, allow_extrapolation=allow_extrapolation
		)

	def parameters(self):
		return [*self.layer.parameters(), ("second_bias", self.second_bias)]


def attach_adafm(net, **kwargs):
	"""AdaFM tunes every convolution except the last one (boundary artifacts)."""
	last = net.layer_names[-1]
	for name in net.layer_names:
		if name == last:
			continue
		net.attach(name, AdaFmProvider(name, net.bank(name)))
	return net


def adafm_as_ftn(layer):
	"""FTN (G = C_out, depth 2, linear slopes) reproducing an AdaFM transition exactly."""
	ftn = FtnLayer(layer.channels, FtnConfig(groups=layer.channels, depth=2))
	ftn.weights[0].data[...] = layer.scale.data.reshape(-1, 1)
	ftn.biases[0].data[...] = layer.shift.data
	return ftn


@dataclass
class DniPair:
	theta_a: OrderedDict
	theta_b: OrderedDict

	def __post_init__(self):
		self.validate()

	def validate(self):
		if list(self.theta_a) != list(self.theta_b):
			missing = sorted(set(self.theta_a) ^ set(self.theta_b))
			throw(f"Parameter stores differ in structure: {missing or 'order'}", StoreIncompatibilityError)
		for name, value in self.theta_a.items():
			if np.shape(value) != np.shape(self.theta_b[name]):
				throw(
					f"{name}: dims {np.shape(value)} vs {np.shape(self.theta_b[name])}", StoreIncompatibilityError
				)


def dni_interpolate(pair, alpha, strict=True):
	"""Blend every parameter of the two stores with the same alpha."""
	alpha = check_alpha(alpha, strict=strict)
	if alpha == 0:
		return OrderedDict((k, np.array(v)) for k, v in pair.theta_a.items())
	if alpha == 1:
		return OrderedDict((k, np.array(v)) for k, v in pair.theta_b.items())
	store = OrderedDict()
	for name, a in pair.theta_a.items():
		a = np.asarray(a)
		store[name] = ((1 - alpha) * a + alpha * np.asarray(pair.theta_b[name])).astype(a.dtype)
	return store


def finetune_unconstrained(net, dataset, config, steps=None):
	"""theta_b: a copy of the phase-1 network with every main parameter trained at sigma_high."""
	tuned = net.copy()
	tuned.detach_all()
	trainer = PhaseTrainer(
		tuned,
		dataset,
		config,
		phase="main",
		sigma=config.sigma_high,
		steps=config.phase2_steps if steps is None else steps,
		lr=config.lr_phase2,
		label="finetune",
	)
	result = trainer.run()
	result.store = tuned.main_store()
	result.network = tuned
	return result


def train_from_scratch(spec, dataset, config, sigma, steps, seed=None):
	"""Reference model trained only for one level."""
	net = build_network(spec, config.seed if seed is None else seed)
	trainer = PhaseTrainer(
		net, dataset, config, phase="main", sigma=sigma, steps=steps, lr=config.lr_phase1, label="scratch"
	)
	result = trainer.run()
	result.network = net
	return result
