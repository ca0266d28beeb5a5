import os

from ftn_cll.exceptions import ConfigurationError, MissingFileError
from ftn_cll.utils import _dict, cint, throw

# Every key has a default; a run file may only override keys listed here.
DEFAULTS = _dict(
	{
		# run
		"seed": 0,
		"out_dir": "out",
		"deterministic": 0,
		"threads": 0,
		"log_every": 100,
		# network
		"channels": 16,
		"num_blocks": 4,
		"kernel_size": 3,
		"image_channels": 1,
		# tuning
		"mode": "ftn",
		"ftn_groups": 1,
		"ftn_depth": 2,
		"ftn_exclude_last": 0,
		"allow_extrapolation": 0,
		"strict_alpha": 1,
		"alpha": 0.5,
		# training
		"batch_size": 16,
		"patch_size": 32,
		"phase1_steps": 3000,
		"phase2_steps": 1500,
		"optimizer": "adam",
		"lr_phase1": 1e-3,
		"lr_phase2": 1e-3,
		"beta1": 0.9,
		"beta2": 0.999,
		"eps": 1e-8,
		"loss": "l2",
		"sigma_low": 20.0,
		"sigma_high": 80.0,
		# evaluation
		"val_images": 8,
		"image_size": 64,
		"sweep_sigmas": "20,40,60,80",
		"sweep_step": 0.01,
		# paths
		"checkpoint": "",
		"checkpoints": "",
		"levelmap": "ramp",
		"input_image": "",
		# gradient check
		"gradcheck_instances": 20,
		"gradcheck_epsilon": 1e-5,
		"gradcheck_tolerance": 1e-6,
	}
)

MODES = ("ftn", "ftn-gc4", "ftn-gc16", "ftn-deeper", "adafm", "finetune")
LOSSES = ("l1", "l2")
OPTIMIZERS = ("adam", "sgd")


def parse_config_file(path):
	"""Read `key = value` lines; `#` starts a comment."""
	if not os.path.exists(path):
		throw(f"Config file {path} does not exist", MissingFileError)
	values = _dict()
	with open(path, encoding="utf-8") as f:
		for lineno, raw in enumerate(f, start=1):
			line = raw.split("#", 1)[0].strip()
			if not line:
				continue
			if "=" not in line:
				throw(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}", ConfigurationError)
			key, value = (part.strip() for part in line.split("=", 1))
			values[key] = value
	return values


def coerce(key, value):
	if key not in DEFAULTS:
		throw(f"Unknown config key '{key}'", ConfigurationError)
	default = DEFAULTS[key]
	try:
		if isinstance(default, bool):
			return bool(cint(value))
		if isinstance(default, int):
			return int(value)
		if isinstance(default, float):
			return float(value)
	except (TypeError, ValueError):
		throw(f"Config key '{key}' expects {type(default).__name__}, got {value!r}", ConfigurationError)
	return str(value)


class RunConfig(_dict):
	def validate(self):
		self.validate_extents()
		self.validate_choices()
		self.validate_levels()

	def validate_extents(self):
		for key in (
			"channels",
			"kernel_size",
			"image_channels",
			"batch_size",
			"patch_size",
			"val_images",
			"image_size",
			"ftn_groups",
			"gradcheck_instances",
			"log_every",
		):
			if self[key] <= 0:
				throw(f"'{key}' must be positive, got {self[key]}", ConfigurationError)
		for key in ("num_blocks", "phase1_steps", "phase2_steps", "threads"):
			if self[key] < 0:
				throw(f"'{key}' must not be negative, got {self[key]}", ConfigurationError)
		if self.kernel_size % 2 == 0:
			throw(f"'kernel_size' must be odd, got {self.kernel_size}", ConfigurationError)
		if self.ftn_depth < 2:
			throw(f"'ftn_depth' must be at least 2, got {self.ftn_depth}", ConfigurationError)
		if self.channels % self.ftn_groups:
			throw(
				f"'ftn_groups' ({self.ftn_groups}) must divide 'channels' ({self.channels})", ConfigurationError
			)
		for key in ("lr_phase1", "lr_phase2", "eps", "sweep_step", "gradcheck_epsilon"):
			if self[key] <= 0:
				throw(f"'{key}' must be positive, got {self[key]}", ConfigurationError)
		for key in ("beta1", "beta2"):
			if not 0 <= self[key] < 1:
				throw(f"'{key}' must lie in [0, 1), got {self[key]}", ConfigurationError)

	def validate_choices(self):
		if self.mode not in MODES:
			throw(f"'mode' must be one of {', '.join(MODES)}, got '{self.mode}'", ConfigurationError)
		if self.loss not in LOSSES:
			throw(f"'loss' must be one of {', '.join(LOSSES)}, got '{self.loss}'", ConfigurationError)
		if self.optimizer not in OPTIMIZERS:
			throw(f"'optimizer' must be one of {', '.join(OPTIMIZERS)}, got '{self.optimizer}'", ConfigurationError)

	def validate_levels(self):
		if self.sigma_low < 0 or self.sigma_high <= self.sigma_low:
			throw(
				f"noise levels must satisfy 0 <= sigma_low < sigma_high, got {self.sigma_low}, {self.sigma_high}",
				ConfigurationError,
			)
		if not self.sweep_sigma_list():
			throw("'sweep_sigmas' must list at least one noise level", ConfigurationError)

	def sweep_sigma_list(self):
		return [float(s) for s in str(self.sweep_sigmas).split(",") if s.strip()]

	def checkpoint_list(self):
		return [p.strip() for p in str(self.checkpoints).split(",") if p.strip()]

	def as_echo(self):
		return {key: self[key] for key in DEFAULTS}


def get_config(path=None, **overrides):
	"""Defaults, then the config file, then overrides."""
	config = RunConfig(DEFAULTS.copy())
	if path:
		for key, value in parse_config_file(path).items():
			config[key] = coerce(key, value)
	for key, value in overrides.items():
		if value is None:
			continue
		config[key] = coerce(key, value)
	config.validate()
	return config
