# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ftn_cll.exceptions import ConfigurationError, DimensionError, ValidationError
from ftn_cll.ftn_cll.tensor_core.tensor_core import Tensor, count_macs
from ftn_cll.utils import _dict, get_logger, throw, worker_count

logger = get_logger("metrics")

PSNR_CAP = 99.0


def psnr(pred, target, peak=1.0):
	"""10 log10(peak^2 / MSE) after clamping to [0, peak]; 99 dB when MSE < 1e-12."""
	pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
	target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
	if pred.shape != target.shape:
		throw(f"psnr: dims {pred.shape} and {target.shape} differ", DimensionError)
	diff = np.clip(pred, 0.0, peak) - np.clip(target, 0.0, peak)
	mse = float(np.mean(diff * diff))
	if mse < 1e-12:
		return PSNR_CAP
	return float(10.0 * np.log10(peak * peak / mse))


def average_psnr(net, noisy, clean, alpha=0.0, chunk=4):
	scores = []
	for start in range(0, len(noisy), chunk):
		out = net.forward(Tensor(noisy[start : start + chunk]), alpha).data
		scores += [psnr(o, c) for o, c in zip(out, clean[start : start + chunk])]
	return float(np.mean(scores))


@dataclass
class SimilarityReport:
	layer: str
	mae: float
	cosine: float
	filters: int
	excluded: int
	elements: int


def _weights(bank):
	if hasattr(bank, "weight"):
		return np.asarray(bank.weight.data, dtype=np.float64)
	return np.asarray(bank, dtype=np.float64)


def filter_similarity(bank_a, bank_b, layer=""):
	"""MAE over raw weights and mean filter-wise cosine; zero-norm filters are left out of the cosine."""
	a, b = _weights(bank_a), _weights(bank_b)
	if a.shape != b.shape:
		throw(f"filter_similarity: dims {a.shape} and {b.shape} differ", DimensionError)
	mae = float(np.mean(np.abs(a - b)))
	fa = a.reshape(a.shape[0], -1)
	fb = b.reshape(b.shape[0], -1)
	norm_a = np.linalg.norm(fa, axis=1)
	norm_b = np.linalg.norm(fb, axis=1)
	valid = (norm_a > 0) & (norm_b > 0)
	excluded = int((~valid).sum())
	if excluded:
		logger.debug("%s: %d zero-norm filters left out of the cosine", layer or "bank", excluded)
	if valid.any():
		cos = np.sum(fa[valid] * fb[valid], axis=1) / (norm_a[valid] * norm_b[valid])
		cosine = float(np.mean(np.clip(cos, -1.0, 1.0)))
	else:
		cosine = float("nan")
	return SimilarityReport(
		layer=layer, mae=mae, cosine=cosine, filters=int(valid.sum()), excluded=excluded, elements=a.size
	)


def network_similarity(banks_a, banks_b):
	"""Per-layer reports plus unweighted and size-weighted aggregates."""
	if list(banks_a) != list(banks_b):
		throw("network_similarity: layer names differ", ValidationError)
	layers = [filter_similarity(banks_a[name], banks_b[name], layer=name) for name in banks_a]
	scored = [r for r in layers if r.filters]
	unweighted = SimilarityReport(
		layer="aggregate_unweighted",
		mae=float(np.mean([r.mae for r in layers])),
		cosine=float(np.mean([r.cosine for r in scored])) if scored else float("nan"),
		filters=sum(r.filters for r in layers),
		excluded=sum(r.excluded for r in layers),
		elements=sum(r.elements for r in layers),
	)
	elements = sum(r.elements for r in layers)
	filters = sum(r.filters for r in scored)
	weighted = SimilarityReport(
		layer="aggregate_weighted",
		mae=float(sum(r.mae * r.elements for r in layers) / elements),
		cosine=float(sum(r.cosine * r.filters for r in scored) / filters) if filters else float("nan"),
		filters=unweighted.filters,
		excluded=unweighted.excluded,
		elements=elements,
	)
	return [*layers, unweighted, weighted]


def macs_formula_ftn(k_h, k_w, c_in, c_out, groups, depth):
	"""K_H * K_W * C_in * (C_out / G) * N, as published for one tuning layer."""
	if groups <= 0 or c_out % groups:
		throw(f"groups={groups} does not divide C_out={c_out}", ConfigurationError)
	return k_h * k_w * c_in * (c_out // groups) * depth


def macs_feature_tuning(height, width, k_h, k_w, c_in, c_out):
	"""Cost of one extra convolution on a feature map: H * W * K_H * K_W * C_in * C_out."""
	return height * width * k_h * k_w * c_in * c_out


def macs_adafm_model(height, width, k_h, k_w, c_out):
	"""Depth-wise K_H x K_W modulation of a C_out-channel feature map."""
	return height * width * k_h * k_w * c_out


@dataclass
class MacsRow:
	component: str
	macs: int
	overhead_pct: float
	params: int


@dataclass
class MacsReport:
	height: int
	width: int
	baseline_macs: int
	baseline_params: int
	rows: list = field(default_factory=list)
	by_layer: dict = field(default_factory=dict)
	by_op: dict = field(default_factory=dict)
	discrepancy: str = ""

	def add(self, component, macs, params):
		overhead = 0.0 if component == "baseline" else 100.0 * macs / self.baseline_macs
		self.rows.append(MacsRow(component, int(macs), overhead, int(params)))

	def row(self, component):
		for row in self.rows:
			if row.component == component:
				return row
		throw(f"No MACs row named '{component}'", ValidationError)


def count_forward_macs(net, height, width, alpha=0.0):
	net.invalidate()
	image = Tensor(np.zeros((1, net.spec.in_channels, height, width), dtype=np.float32))
	with count_macs() as counter:
		net.forward(image, alpha)
	net.invalidate()
	return counter


def macs_instrumented(net, height, width, alpha=0.5):
	"""Exact MACs of one forward pass versus the plain network, plus the cost models."""
	plain = net.copy()
	plain.detach_all()
	baseline = count_forward_macs(plain, height, width)
	report = MacsReport(
		height=height, width=width, baseline_macs=baseline.total, baseline_params=net.spec.parameter_count()
	)
	report.add("baseline", baseline.total, report.baseline_params)

	shapes = net.spec.layer_shapes()
	last = net.layer_names[-1]
	feature = sum(macs_feature_tuning(height, width, s[2], s[3], s[1], s[0]) for s in shapes.values())
	report.add("feature_tuning_model", feature, report.baseline_params)
	adafm = sum(macs_adafm_model(height, width, s[2], s[3], s[0]) for n, s in shapes.items() if n != last)
	adafm_params = sum(s[0] * s[2] * s[3] + s[0] for n, s in shapes.items() if n != last)
	report.add("adafm_model", adafm, adafm_params)

	if net.tuning:
		tuned = count_forward_macs(net, height, width, alpha)
		label = net.tuning["mode"]
		params = sum(int(np.size(v)) for v in net.tuning_store().values())
		report.add(f"{label}_exact", tuned.total - baseline.total, params)
		report.by_layer = {k: v - baseline.by_scope.get(k, 0) for k, v in tuned.by_scope.items()}
		report.by_op = {k: v - baseline.by_op.get(k, 0) for k, v in tuned.by_op.items()}
		if net.tuning["provider"] == "ftn":
			formula = 0
			for provider in net.tuned_providers():
				s = provider.base.shape
				formula += macs_formula_ftn(s[2], s[3], s[1], s[0], provider.layer.groups, provider.layer.depth)
			report.add(f"{label}_formula", formula, params)
			stages = report.by_op.get("grouped_pointwise_conv", 0)
			if stages != formula:
				report.discrepancy = (
					f"{label}: instrumented filter-stage MACs {stages} vs published formula {formula} "
					f"(ratio {stages / formula:.2f})"
				)
				logger.info(report.discrepancy)
	return report


def sweep_alphas(step=0.01):
	count = int(round(1.0 / step))
	return [round(i * step, 10) for i in range(count + 1)]


@dataclass
class SweepResult:
	alphas: list
	sigmas: list
	psnr: np.ndarray
	sigma_low: float
	sigma_high: float

	def __post_init__(self):
		self.psnr = np.asarray(self.psnr, dtype=np.float64)
		self.validate()

	def validate(self):
		if self.psnr.shape != (len(self.alphas), len(self.sigmas)):
			throw(
				f"Sweep grid {self.psnr.shape} does not cover {len(self.alphas)} x {len(self.sigmas)}",
				ValidationError,
			)
		if not np.all(np.isfinite(self.psnr)):
			throw("Sweep grid has missing or non-finite cells", ValidationError)

	def rows(self):
		return [
			{"alpha": alpha, "sigma": sigma, "psnr": self.psnr[i, j]}
			for j, sigma in enumerate(self.sigmas)
			for i, alpha in enumerate(self.alphas)
		]

	def ideal_alpha(self, sigma):
		return (sigma - self.sigma_low) / (self.sigma_high - self.sigma_low)

	def argmax_alpha(self):
		"""First alpha reaching the best PSNR for every sigma."""
		return {sigma: self.alphas[int(np.argmax(self.psnr[:, j]))] for j, sigma in enumerate(self.sigmas)}

	def deviations(self):
		return {sigma: alpha - self.ideal_alpha(sigma) for sigma, alpha in self.argmax_alpha().items()}

	def max_deviation(self):
		return max(abs(d) for d in self.deviations().values())

	def is_monotone(self):
		best = self.argmax_alpha()
		ordered = [best[s] for s in sorted(best)]
		return all(a <= b for a, b in zip(ordered, ordered[1:]))

	@classmethod
	def from_rows(cls, rows, sigma_low, sigma_high):
		alphas = sorted({float(r["alpha"]) for r in rows})
		sigmas = sorted({float(r["sigma"]) for r in rows})
		grid = np.full((len(alphas), len(sigmas)), np.nan)
		for r in rows:
			grid[alphas.index(float(r["alpha"])), sigmas.index(float(r["sigma"]))] = float(r["psnr"])
		return cls(alphas=alphas, sigmas=sigmas, psnr=grid, sigma_low=sigma_low, sigma_high=sigma_high)


def alpha_sweep(net, dataset, config, sigmas=None, step=None, model_at=None):
	"""PSNR on the fixed validation set for every (alpha, sigma) cell.

	`model_at(alpha)` returns (network, level) to evaluate; by default the
	network itself at that alpha. Cells run in parallel, rows assemble in grid order.
	"""
	sigmas = sigmas or config.sweep_sigma_list()
	alphas = sweep_alphas(step or config.sweep_step)
	sets = [dataset.validation_set(config.val_images, config.image_size, sigma) for sigma in sigmas]
	model_at = model_at or (lambda alpha: (net, alpha))
	net.invalidate()

	def column(alpha):
		model, level = model_at(alpha)
		return [average_psnr(model, noisy, clean, level) for noisy, clean in sets]

	workers = worker_count(config)
	if workers > 1:
		with ThreadPoolExecutor(max_workers=workers) as pool:
			grid = list(pool.map(column, alphas))
	else:
		grid = [column(alpha) for alpha in alphas]
	return SweepResult(
		alphas=alphas, sigmas=list(sigmas), psnr=grid, sigma_low=config.sigma_low, sigma_high=config.sigma_high
	)


def evaluate_levels(net, dataset, config, sigmas=None, model_at=None):
	"""PSNR at each level with alpha on the ideal line between the two trained levels."""
	sigmas = sigmas or config.sweep_sigma_list()
	model_at = model_at or (lambda alpha: (net, alpha))
	rows = []
	for sigma in sigmas:
		alpha = (sigma - config.sigma_low) / (config.sigma_high - config.sigma_low)
		alpha = min(max(alpha, 0.0), 1.0)
		model, level = model_at(alpha)
		noisy, clean = dataset.validation_set(config.val_images, config.image_size, sigma)
		rows.append(_dict(sigma=sigma, alpha=alpha, psnr=average_psnr(model, noisy, clean, level)))
	return rows


def alpha_step_changes(net, image, step=0.01):
	"""Max abs output change between consecutive alphas of a sweep."""
	image = image if isinstance(image, Tensor) else Tensor(image)
	previous = None
	changes = []
	for alpha in sweep_alphas(step):
		out = net.forward(image, alpha).data.astype(np.float64)
		if previous is not None:
			changes.append(float(np.max(np.abs(out - previous))))
		previous = out
	changes = np.asarray(changes)
	return _dict(
		changes=changes,
		max_change=float(changes.max()),
		median_change=float(np.median(changes)),
		lipschitz=float(changes.max() / step),
	)
