# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

import numpy as np

from ftn_cll.exceptions import ConfigurationError
from ftn_cll.ftn_cll.filter_transition.filter_transition import FtnConfig, FtnLayer, effective_filters
from ftn_cll.ftn_cll.network.network import FilterBank
from ftn_cll.ftn_cll.tensor_core.tensor_core import (
	add,
	blend,
	conv2d,
	filter_affine,
	grad_check,
	grouped_pointwise_conv,
	kink_mask,
	loss_l1,
	loss_l2,
	permute,
	prelu,
)
from ftn_cll.utils import _dict, get_logger, seeded_rng, throw

logger = get_logger("gradcheck")

GRADCHECK_STREAM = 7


def _normal(rng, *shape):
	return rng.standard_normal(shape)


def conv2d_case(rng):
	x, w, b = _normal(rng, 2, 3, 5, 5), _normal(rng, 4, 3, 3, 3), _normal(rng, 4)
	target = _normal(rng, 2, 4, 5, 5)
	return (lambda x, w, b: loss_l2(conv2d(x, w, b), target)), [x, w, b], None


def grouped_case(groups):
	def case(rng):
		x, w, b = _normal(rng, 2, 4, 3, 3), _normal(rng, 4, 4 // groups), _normal(rng, 4)
		target = _normal(rng, 2, 4, 3, 3)
		return (lambda x, w, b: loss_l2(grouped_pointwise_conv(x, w, b, groups), target)), [x, w, b], None

	return case


def prelu_case(rng):
	x, slope = _normal(rng, 2, 3, 4, 4), np.array(rng.uniform(0.05, 0.9))
	target = _normal(rng, 2, 3, 4, 4)
	return (lambda x, a: loss_l2(prelu(x, a), target)), [x, slope], [kink_mask(x), None]


def blend_case(rng):
	a, b = _normal(rng, 3, 2, 3, 3), _normal(rng, 3, 2, 3, 3)
	alpha = rng.uniform(0.0, 1.0)
	target = _normal(rng, 3, 2, 3, 3)
	return (lambda a, b: loss_l2(blend(a, b, alpha), target)), [a, b], None


def add_case(rng):
	a, b, target = _normal(rng, 2, 3, 4, 4), _normal(rng, 2, 3, 4, 4), _normal(rng, 2, 3, 4, 4)
	return (lambda a, b: loss_l2(add(a, b), target)), [a, b], None


def permute_case(rng):
	x, target = _normal(rng, 4, 3, 3, 3), _normal(rng, 3, 4, 3, 3)
	return (lambda x: loss_l2(permute(x, (1, 0, 2, 3)), target)), [x], None


def filter_affine_case(rng):
	x, scale, shift = _normal(rng, 4, 3, 3, 3), _normal(rng, 4), _normal(rng, 4)
	target = _normal(rng, 4, 3, 3, 3)
	return (lambda x, s, t: loss_l2(filter_affine(x, s, t), target)), [x, scale, shift], None


def loss_l2_case(rng):
	pred, target = _normal(rng, 2, 1, 4, 4), _normal(rng, 2, 1, 4, 4)
	return loss_l2, [pred, target], None


def loss_l1_case(rng):
	pred, target = _normal(rng, 2, 1, 4, 4), _normal(rng, 2, 1, 4, 4)
	kinks = kink_mask(pred - target)
	return loss_l1, [pred, target], [kinks, kinks]


def ftn_layer_case(groups, depth):
	"""Whole FTN-wrapped conv: image, main filters and every FTN parameter are checked."""

	def case(rng):
		c_out, c_in, k = 4, 2, 3
		x, target = _normal(rng, 1, c_in, 5, 5), _normal(rng, 1, c_out, 5, 5)
		weight, bias, second_bias = _normal(rng, c_out, c_in, k, k), _normal(rng, c_out), _normal(rng, c_out)
		stage_w = [_normal(rng, c_out, c_out // groups) for _ in range(depth)]
		stage_b = [_normal(rng, c_out) * 0.1 for _ in range(depth)]
		slopes = [np.array(rng.uniform(0.1, 0.9)) for _ in range(depth - 1)]
		alpha = rng.uniform(0.1, 0.9)

		def fn(x, weight, bias, second_bias, *ftn):
			layer = FtnLayer(c_out, FtnConfig(groups=groups, depth=depth))
			layer.weights = list(ftn[:depth])
			layer.biases = list(ftn[depth : 2 * depth])
			layer.slopes = list(ftn[2 * depth :])
			bank = effective_filters(layer, FilterBank(weight, bias), alpha, second_bias)
			return loss_l2(conv2d(x, bank.weight, bank.bias), target)

		return fn, [x, weight, bias, second_bias, *stage_w, *stage_b, *slopes], None

	return case


CHECKS = {
	"conv2d": conv2d_case,
	"grouped_pointwise_conv_g1": grouped_case(1),
	"grouped_pointwise_conv_g2": grouped_case(2),
	"grouped_pointwise_conv_g4": grouped_case(4),
	"prelu": prelu_case,
	"blend": blend_case,
	"add": add_case,
	"permute": permute_case,
	"filter_affine": filter_affine_case,
	"loss_l2": loss_l2_case,
	"loss_l1": loss_l1_case,
	"ftn_layer_g1": ftn_layer_case(1, 2),
	"ftn_layer_g4": ftn_layer_case(4, 2),
	"ftn_layer_deeper": ftn_layer_case(1, 3),
}


def run_check(name, instances=20, epsilon=1e-5, tolerance=1e-6, seed=0):
	if name not in CHECKS:
		throw(f"Unknown gradient check '{name}'; known: {', '.join(CHECKS)}", ConfigurationError)
	rng = seeded_rng(seed, GRADCHECK_STREAM)
	worst = _dict(max_rel_error=0.0, instance=-1, input=-1, index=-1)
	checked = skipped = 0
	for instance in range(instances):
		fn, inputs, exclude = CHECKS[name](rng)
		result = grad_check(fn, inputs, epsilon=epsilon, exclude=exclude, seed=seed + instance)
		checked += result.checked
		skipped += result.skipped
		if result.max_rel_error > worst.max_rel_error:
			worst.update(
				max_rel_error=result.max_rel_error,
				instance=instance,
				input=result.worst_input,
				index=result.worst_index,
			)
	row = _dict(
		check=name,
		instances=instances,
		checked=checked,
		skipped=skipped,
		max_rel_error=worst.max_rel_error,
		worst=f"instance {worst.instance} input {worst.input} index {worst.index}" if worst.instance >= 0 else "",
		passed=int(worst.max_rel_error <= tolerance),
	)
	logger.info("%s: worst relative error %.3e over %d coordinates", name, row.max_rel_error, checked)
	return row


def run_gradcheck(instances=20, epsilon=1e-5, tolerance=1e-6, seed=0, checks=None):
	return [run_check(name, instances, epsilon, tolerance, seed) for name in (checks or CHECKS)]
