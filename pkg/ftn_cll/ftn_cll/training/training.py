# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

import time
from dataclasses import dataclass

import numpy as np

from ftn_cll.exceptions import ConfigurationError, NonFiniteError, RangeError, TrainingFailure
from ftn_cll.ftn_cll.metrics.metrics import average_psnr
from ftn_cll.ftn_cll.network.network import collect_parameters
from ftn_cll.ftn_cll.tensor_core.tensor_core import Tape, Tensor, get_loss
from ftn_cll.utils import _dict, get_logger, seeded_rng, store_hash, throw

logger = get_logger("training")

# generator streams per seed; 0 is parameter init
TRAIN_STREAM = 1
VALIDATION_STREAM = 2
NOISE_STREAM = 3
VALIDATION_NOISE_STREAM = 4


@dataclass
class NoiseLevel:
	"""Noise level on the 8-bit scale; `sigma` is the same level for images in [0, 1]."""

	level: float

	def __post_init__(self):
		if self.level < 0:
			throw(f"Noise level must not be negative, got {self.level}", RangeError)

	@property
	def sigma(self):
		return self.level / 255.0


def as_noise_level(value):
	return value if isinstance(value, NoiseLevel) else NoiseLevel(float(value))


@dataclass
class TrainConfig:
	seed: int = 0
	batch_size: int = 16
	patch_size: int = 32
	phase1_steps: int = 3000
	phase2_steps: int = 1500
	optimizer: str = "adam"
	lr_phase1: float = 1e-3
	lr_phase2: float = 1e-3
	beta1: float = 0.9
	beta2: float = 0.999
	eps: float = 1e-8
	loss: str = "l2"
	sigma_low: float = 20.0
	sigma_high: float = 80.0

	def __post_init__(self):
		if self.batch_size <= 0 or self.patch_size <= 0:
			throw("batch_size and patch_size must be positive", ConfigurationError)
		if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
			throw("learning rates must be positive", ConfigurationError)

	@classmethod
	def from_config(cls, config):
		return cls(**{key: config[key] for key in cls.__dataclass_fields__})


class SyntheticDataset:
	"""Procedural images: smooth gradients, random rectangles and band-limited texture, in [0, 1]."""

	def __init__(self, seed=0, patch_size=32, channels=1):
		self.seed = seed
		self.patch_size = patch_size
		self.channels = channels
		self.train_rng = seeded_rng(seed, TRAIN_STREAM)
		self.noise_rng = seeded_rng(seed, NOISE_STREAM)

	def render(self, rng, count, size):
		images = np.empty((count, self.channels, size, size), dtype=np.float32)
		for i in range(count):
			images[i] = self.render_one(rng, size)
		return images

	def render_one(self, rng, size):
		yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
		base = rng.uniform(0.2, 0.8) + rng.uniform(-0.4, 0.4) * xx + rng.uniform(-0.4, 0.4) * yy
		image = np.repeat(base[None], self.channels, axis=0)
		for _ in range(rng.integers(1, 6)):
			y0, x0 = rng.integers(0, size, 2)
			h, w = rng.integers(size // 8 + 1, size // 2 + 2, 2)
			value = rng.uniform(0.0, 1.0, self.channels)[:, None, None]
			opacity = rng.uniform(0.5, 1.0)
			patch = image[:, y0 : y0 + h, x0 : x0 + w]
			image[:, y0 : y0 + h, x0 : x0 + w] = (1 - opacity) * patch + opacity * value
		image += self.texture(rng, size)
		return np.clip(image, 0.0, 1.0)

	def texture(self, rng, size):
		"""White noise low-passed with a Gaussian in the frequency domain, std ~0.05."""
		freq = np.fft.fftfreq(size)
		radius = np.sqrt(freq[:, None] ** 2 + freq[None, :] ** 2)
		cutoff = rng.uniform(0.05, 0.2)
		spectrum = np.fft.fft2(rng.standard_normal((self.channels, size, size))) * np.exp(
			-((radius / cutoff) ** 2)
		)
		texture = np.real(np.fft.ifft2(spectrum))
		std = texture.std()
		return texture * (rng.uniform(0.02, 0.08) / std) if std > 0 else texture

	def clean_batch(self, count, size=None):
		return self.render(self.train_rng, count, size or self.patch_size)

	def validation_set(self, count, size, level):
		"""Fixed clean images and noisy copies; one noise draw shared across levels."""
		sigma = as_noise_level(level).sigma
		clean = self.render(seeded_rng(self.seed, VALIDATION_STREAM), count, size)
		noise = seeded_rng(self.seed, VALIDATION_NOISE_STREAM).standard_normal(clean.shape)
		return (clean + sigma * noise).astype(np.float32), clean


def sample_batch(dataset, config, level):
	"""(noisy, clean) training batch; noise is added without clipping."""
	sigma = as_noise_level(level).sigma
	clean = dataset.clean_batch(config.batch_size, config.patch_size)
	noise = dataset.noise_rng.standard_normal(clean.shape)
	noisy = (clean + sigma * noise).astype(np.float32)
	return Tensor(noisy), Tensor(clean)


def new_adam_state():
	return _dict(t=0, m={}, v={})


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
	"""In-place bias-corrected Adam update of `params` (name -> array)."""
	beta1, beta2 = betas
	for name, grad in grads.items():
		if not np.all(np.isfinite(grad)):
			throw(f"Non-finite gradient for {name}", NonFiniteError)
	state.t += 1
	correction1 = 1.0 - beta1**state.t
	correction2 = 1.0 - beta2**state.t
	for name, param in params.items():
		grad = grads[name]
		if name not in state.m:
			state.m[name] = np.zeros_like(param)
			state.v[name] = np.zeros_like(param)
		m, v = state.m[name], state.v[name]
		m *= beta1
		m += (1.0 - beta1) * grad
		v *= beta2
		v += (1.0 - beta2) * (grad * grad)
		param -= (lr * (m / correction1) / (np.sqrt(v / correction2) + eps)).astype(param.dtype)
	return params, state


class Adam:
	def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
		self.lr = lr
		self.betas = betas
		self.eps = eps
		self.state = new_adam_state()

	def step(self, params, grads):
		adam_step(params, grads, self.state, self.lr, self.betas, self.eps)


class Sgd:
	def __init__(self, lr):
		self.lr = lr

	def step(self, params, grads):
		for name, param in params.items():
			if not np.all(np.isfinite(grads[name])):
				throw(f"Non-finite gradient for {name}", NonFiniteError)
			param -= (self.lr * grads[name]).astype(param.dtype)


def make_optimizer(config, lr):
	if config.optimizer == "sgd":
		return Sgd(lr)
	return Adam(lr, betas=(config.beta1, config.beta2), eps=config.eps)


def evaluate_psnr(net, dataset, config, level, alpha=0.0, chunk=4):
	"""Average PSNR over the fixed validation set."""
	noisy, clean = dataset.validation_set(config.val_images, config.image_size, level)
	return average_psnr(net, noisy, clean, alpha, chunk)


class PhaseTrainer:
	"""One training phase: main (alpha = 0 on the main filters) or tuning (alpha = 1, main frozen)."""

	def __init__(self, net, dataset, config, phase, sigma, steps, lr, label=None):
		self.net = net
		self.dataset = dataset
		self.config = config
		self.phase = phase
		self.level = as_noise_level(sigma)
		self.steps = steps
		self.lr = lr
		self.label = label or phase
		self.alpha = 1.0 if phase == "tuning" else 0.0

	def validate(self):
		if self.phase not in ("main", "tuning"):
			throw(f"Unknown training phase '{self.phase}'", ConfigurationError)
		if self.steps < 0:
			throw(f"Step budget must not be negative, got {self.steps}", ConfigurationError)
		if self.lr <= 0:
			throw(f"Learning rate must be positive, got {self.lr}", ConfigurationError)

	def run(self):
		self.validate()
		params = collect_parameters(self.net, self.phase)
		self.net.set_phase(self.phase)
		optimizer = make_optimizer(self.config, self.lr)
		loss_fn = get_loss(self.config.loss)
		main_hash = store_hash(self.net.main_store())
		curve = []
		started = time.perf_counter()
		logger.info("%s: %d steps at sigma=%g, alpha=%g", self.label, self.steps, self.level.level, self.alpha)
		try:
			for step in range(self.steps):
				curve.append({"step": step, "loss": self.train_step(params, optimizer, loss_fn, step)})
				if (step + 1) % self.config.log_every == 0:
					logger.info("%s: step %d loss %.6f", self.label, step + 1, curve[-1]["loss"])
		finally:
			self.net.set_phase("inference")
		if self.phase == "tuning" and store_hash(self.net.main_store()) != main_hash:
			throw(f"{self.label}: main parameters changed during the tuning phase", TrainingFailure)
		val_psnr = evaluate_psnr(self.net, self.dataset, self.config, self.level, self.alpha)
		elapsed = time.perf_counter() - started
		logger.info("%s: done in %.1fs, validation PSNR %.3f dB", self.label, elapsed, val_psnr)
		return _dict(
			label=self.label,
			phase=self.phase,
			sigma=self.level.level,
			steps=self.steps,
			curve=curve,
			val_psnr=val_psnr,
			seconds=elapsed,
			store=self.net.state_dict(),
		)

	def train_step(self, params, optimizer, loss_fn, step):
		noisy, clean = sample_batch(self.dataset, self.config, self.level)
		with Tape() as tape:
			loss = loss_fn(self.net.forward(noisy, self.alpha), clean)
		value = float(loss.data)
		if not np.isfinite(value):
			throw(f"{self.label}: loss became non-finite at step {step}", TrainingFailure)
		tape.backward(loss)
		arrays = {name: param.data for name, param in params}
		grads = {
			name: param.grad if param.grad is not None else np.zeros_like(param.data) for name, param in params
		}
		try:
			optimizer.step(arrays, grads)
		except NonFiniteError as e:
			raise TrainingFailure(f"{self.label}: {e} at step {step}", step=step)
		for _, param in params:
			param.zero_grad()
		self.net.invalidate()
		return value


def train_phase1(net, dataset, config, steps=None):
	"""First level (sigma_low) with alpha = 0; only main parameters move."""
	return PhaseTrainer(
		net,
		dataset,
		config,
		phase="main",
		sigma=config.sigma_low,
		steps=config.phase1_steps if steps is None else steps,
		lr=config.lr_phase1,
		label="phase1",
	).run()


def train_phase2(net, dataset, config, steps=None):
	"""Second level (sigma_high) at alpha = 1 with the main network frozen."""
	if not net.tuned_providers():
		throw("Phase 2 needs tuning providers attached to the network", ConfigurationError)
	return PhaseTrainer(
		net,
		dataset,
		config,
		phase="tuning",
		sigma=config.sigma_high,
		steps=config.phase2_steps if steps is None else steps,
		lr=config.lr_phase2,
		label="phase2",
	).run()
