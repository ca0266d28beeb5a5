# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ftn_cll.exceptions import (
	ConfigurationError,
	DimensionError,
	GradientCheckFailure,
	NonFiniteError,
	RangeError,
	TapeCorruptionError,
)
from ftn_cll.utils import get_logger, throw

logger = get_logger("tensor_core")

PRECISIONS = {"single": np.float32, "double": np.float64}

_local = threading.local()


def _state():
	if not hasattr(_local, "precision"):
		_local.precision = "single"
		_local.tape = None
		_local.counter = None
		_local.scope = ""
	return _local


def get_precision():
	return _state().precision


def default_dtype():
	return PRECISIONS[get_precision()]


@contextmanager
def precision(mode):
	if mode not in PRECISIONS:
		throw(f"Precision must be one of {', '.join(PRECISIONS)}, got '{mode}'", ConfigurationError)
	state = _state()
	previous = state.precision
	state.precision = mode
	try:
		yield
	finally:
		state.precision = previous


class Tensor:
	"""Dense array with optional tape participation.

	Activations are 4-D (N, C, H, W); parameters may have lower rank.
	"""

	def __init__(self, data, requires_grad=False, name=None, dtype=None):
		self.data = np.asarray(data, dtype=dtype or default_dtype())
		self.requires_grad = requires_grad
		self.grad = None
		self.name = name
		self.node = None

	@property
	def dims(self):
		return self.data.shape

	@property
	def is_leaf(self):
		return self.node is None

	def numpy(self):
		return self.data

	def zero_grad(self):
		self.grad = None

	def accumulate_grad(self, grad):
		if grad.shape != self.data.shape:
			throw(f"Gradient dims {grad.shape} do not match tensor dims {self.data.shape}", TapeCorruptionError)
		if self.grad is None:
			self.grad = np.array(grad, dtype=self.data.dtype)
		else:
			self.grad += grad

	def __repr__(self):
		label = f" name={self.name}" if self.name else ""
		return f"Tensor(dims={self.dims}, dtype={self.data.dtype}{label}, requires_grad={self.requires_grad})"


def as_tensor(value):
	return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class Node:
	op: str
	output: Tensor
	parents: tuple
	backward: object
	saved: dict = field(default_factory=dict)


class Tape:
	"""Append-only record of operations; backward walks it in reverse insertion order.

	Use as a context manager to make it the active tape of the current thread.
	"""

	def __init__(self):
		self.nodes = []
		self.released = False
		self._previous = None

	def __enter__(self):
		state = _state()
		self._previous = state.tape
		state.tape = self
		return self

	def __exit__(self, *exc):
		_state().tape = self._previous
		return False

	def record(self, op, output, parents, backward, saved):
		if self.released:
			throw(f"Cannot record '{op}' on a released tape", TapeCorruptionError)
		node = Node(op=op, output=output, parents=tuple(parents), backward=backward, saved=saved)
		output.node = node
		self.nodes.append(node)
		return node

	def backward(self, loss, grad=None):
		"""Populate `.grad` on every requires_grad leaf reachable from `loss`."""
		if self.released:
			throw("Tape was already released; saved activations are gone", TapeCorruptionError)
		seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.data.dtype)
		grads = {id(loss): seed}
		leaves = {}
		if loss.is_leaf and loss.requires_grad:
			leaves[id(loss)] = loss
		for node in reversed(self.nodes):
			upstream = grads.pop(id(node.output), None)
			if upstream is None:
				continue
			if node.saved is None:
				throw(f"Saved activations for '{node.op}' are missing", TapeCorruptionError)
			parent_grads = node.backward(upstream, node.saved)
			for parent, parent_grad in zip(node.parents, parent_grads):
				if parent_grad is None or not parent.requires_grad:
					continue
				key = id(parent)
				grads[key] = grads[key] + parent_grad if key in grads else parent_grad
				if parent.is_leaf:
					leaves[key] = parent
		for key, leaf in leaves.items():
			leaf.accumulate_grad(grads[key])
		self.release()

	def release(self):
		for node in self.nodes:
			node.saved = None
		self.released = True


def active_tape():
	return _state().tape


def _emit(op, data, parents, backward, **saved):
	out = Tensor(data, dtype=data.dtype)
	tape = active_tape()
	if tape is not None and any(p.requires_grad for p in parents):
		out.requires_grad = True
		tape.record(op, out, parents, backward, saved)
	return out


class MacCounter:
	"""Multiply-accumulate tally per operation and per scope for forward passes."""

	def __init__(self):
		self.total = 0
		self.by_op = {}
		self.by_scope = {}

	def add(self, op, count, scope=""):
		count = int(count)
		self.total += count
		self.by_op[op] = self.by_op.get(op, 0) + count
		self.by_scope[scope] = self.by_scope.get(scope, 0) + count


@contextmanager
def count_macs():
	state = _state()
	previous = state.counter
	counter = MacCounter()
	state.counter = counter
	try:
		yield counter
	finally:
		state.counter = previous


@contextmanager
def mac_scope(name):
	state = _state()
	previous = state.scope
	state.scope = name
	try:
		yield
	finally:
		state.scope = previous


def _count(op, macs):
	state = _state()
	if state.counter is not None:
		state.counter.add(op, macs, state.scope)


def validate_finite(tensor, context=""):
	data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
	if not np.all(np.isfinite(data)):
		where = f" in {context}" if context else ""
		throw(f"Non-finite values{where}", NonFiniteError)


def _check_same_dims(a, b, op):
	if a.dims != b.dims:
		axes = [str(i) for i, (x, y) in enumerate(zip(a.dims, b.dims)) if x != y] or ["rank"]
		throw(f"{op}: dims {a.dims} and {b.dims} differ on axes {', '.join(axes)}", DimensionError)


def _check_conv_shapes(x, w, padding):
	if x.data.ndim != 4:
		throw(f"conv2d: input must be 4-D (N, C, H, W), got dims {x.dims}", DimensionError)
	if w.data.ndim != 4:
		throw(f"conv2d: filters must be 4-D (C_out, C_in, K_H, K_W), got dims {w.dims}", DimensionError)
	if w.dims[1] != x.dims[1]:
		throw(f"conv2d: filters C_in={w.dims[1]} does not match input C={x.dims[1]} (axis 1)", DimensionError)
	if w.dims[2] % 2 == 0 or w.dims[3] % 2 == 0:
		throw(f"conv2d: kernel extents must be odd, got K_H={w.dims[2]}, K_W={w.dims[3]}", DimensionError)
	if padding < 0:
		throw(f"conv2d: padding must not be negative, got {padding}", DimensionError)
	if x.dims[2] + 2 * padding < w.dims[2] or x.dims[3] + 2 * padding < w.dims[3]:
		throw(f"conv2d: kernel {w.dims[2:]} larger than padded input {x.dims[2:]}", DimensionError)


def _windows(x, kh, kw, padding):
	xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
	return xp, sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d(x, weight, bias=None, padding=None):
	"""Stride-1 cross-correlation with zero padding; padding defaults to (K-1)/2."""
	x = as_tensor(x)
	kh, kw = weight.dims[2], weight.dims[3]
	padding = (kh - 1) // 2 if padding is None else padding
	_check_conv_shapes(x, weight, padding)
	if bias is not None and bias.dims != (weight.dims[0],):
		throw(f"conv2d: bias dims {bias.dims} do not match C_out={weight.dims[0]}", DimensionError)
	_, windows = _windows(x.data, kh, kw, padding)
	out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
	if bias is not None:
		out = out + bias.data[None, :, None, None]
	out = np.ascontiguousarray(out, dtype=x.data.dtype)
	n, _, ho, wo = out.shape
	_count("conv2d", n * ho * wo * kh * kw * weight.dims[1] * weight.dims[0])

	def backward(grad, saved):
		gx, gw, gb = conv2d_backward(grad, saved.get("input"), saved.get("filters"), saved.get("padding"))
		return (gx, gw) if bias is None else (gx, gw, gb)

	parents = (x, weight) if bias is None else (x, weight, bias)
	return _emit("conv2d", out, parents, backward, input=x.data, filters=weight.data, padding=padding)


def conv2d_backward(grad_out, x, filters, padding):
	"""Gradients of conv2d w.r.t. input, filters and bias for a recorded forward call."""
	if x is None or filters is None or padding is None:
		throw("conv2d_backward: saved input or filters missing", TapeCorruptionError)
	kh, kw = filters.shape[2], filters.shape[3]
	n, _, h, w = x.shape
	if grad_out.shape != (n, filters.shape[0], h + 2 * padding - kh + 1, w + 2 * padding - kw + 1):
		throw(f"conv2d_backward: grad_out dims {grad_out.shape} do not match the forward call", TapeCorruptionError)
	_, windows = _windows(x, kh, kw, padding)
	grad_filters = np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3])).astype(x.dtype)
	grad_bias = grad_out.sum(axis=(0, 2, 3))
	# full correlation of grad_out with the flipped filters gives the padded-input gradient
	full = np.pad(grad_out, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
	grad_windows = sliding_window_view(full, (kh, kw), axis=(2, 3))
	flipped = filters[:, :, ::-1, ::-1]
	grad_xp = np.tensordot(grad_windows, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
	grad_input = np.ascontiguousarray(grad_xp[:, :, padding : padding + h, padding : padding + w], dtype=x.dtype)
	return grad_input, grad_filters, grad_bias


def grouped_pointwise_conv(x, weight, bias, groups):
	"""1x1 convolution whose (C, C/G) weights only mix channels inside each of G groups."""
	x = as_tensor(x)
	if x.data.ndim != 4:
		throw(f"grouped_pointwise_conv: input must be 4-D, got dims {x.dims}", DimensionError)
	n, c, h, w = x.dims
	if groups <= 0 or c % groups:
		throw(f"grouped_pointwise_conv: groups={groups} does not divide C={c}", ConfigurationError)
	cg = c // groups
	if weight.dims != (c, cg):
		throw(f"grouped_pointwise_conv: weight dims {weight.dims}, expected ({c}, {cg})", DimensionError)
	if bias.dims != (c,):
		throw(f"grouped_pointwise_conv: bias dims {bias.dims}, expected ({c},)", DimensionError)
	xg = x.data.reshape(n, groups, cg, h, w)
	wg = weight.data.reshape(groups, cg, cg)
	out = np.einsum("goi,ngihw->ngohw", wg, xg).reshape(n, c, h, w) + bias.data[None, :, None, None]
	_count("grouped_pointwise_conv", n * h * w * c * cg)

	def backward(grad, saved):
		g5 = grad.reshape(n, groups, cg, h, w)
		saved_wg = saved["weight"].reshape(groups, cg, cg)
		saved_xg = saved["input"].reshape(n, groups, cg, h, w)
		grad_w = np.einsum("ngohw,ngihw->goi", g5, saved_xg).reshape(c, cg)
		grad_x = np.einsum("goi,ngohw->ngihw", saved_wg, g5).reshape(n, c, h, w)
		return grad_x, grad_w, grad.sum(axis=(0, 2, 3))

	return _emit(
		"grouped_pointwise_conv",
		out.astype(x.data.dtype),
		(x, weight, bias),
		backward,
		input=x.data,
		weight=weight.data,
	)


def prelu(x, slope):
	"""max(0, x) + slope * min(0, x); x == 0 takes the positive branch."""
	x = as_tensor(x)
	slope_t = slope if isinstance(slope, Tensor) else Tensor(slope, dtype=x.data.dtype)
	a = slope_t.data
	out = np.where(x.data >= 0, x.data, a * x.data).astype(x.data.dtype)

	def backward(grad, saved):
		data = saved["input"]
		negative = data < 0
		grad_x = np.where(negative, a * grad, grad)
		grad_slope = np.sum(np.where(negative, data * grad, 0)).reshape(a.shape).astype(a.dtype)
		return grad_x, grad_slope

	return _emit("prelu", out, (x, slope_t), backward, input=x.data)


def check_alpha(alpha, strict=True, allow_extrapolation=False):
	"""Range policy for blend coefficients; returns the (possibly clamped) alpha."""
	if allow_extrapolation:
		return alpha
	values = np.asarray(alpha)
	if np.all((values >= 0) & (values <= 1)):
		return alpha
	if strict:
		throw(f"alpha must lie in [0, 1], got range [{values.min()}, {values.max()}]", RangeError)
	logger.warning("alpha outside [0, 1] (range [%s, %s]); clamping", values.min(), values.max())
	return np.clip(alpha, 0.0, 1.0) if values.ndim else float(np.clip(alpha, 0.0, 1.0))


def blend(a, b, alpha, strict=True, allow_extrapolation=False):
	"""(1 - alpha) * a + alpha * b; alpha is a scalar or an array broadcast over a."""
	a = as_tensor(a)
	b = as_tensor(b)
	_check_same_dims(a, b, "blend")
	alpha = check_alpha(alpha, strict=strict, allow_extrapolation=allow_extrapolation)
	if np.ndim(alpha):
		alpha = np.asarray(alpha, dtype=a.data.dtype)
	out = ((1 - alpha) * a.data + alpha * b.data).astype(a.data.dtype)
	_count("blend", 2 * out.size)

	def backward(grad, saved):
		return (1 - alpha) * grad, alpha * grad

	return _emit("blend", out, (a, b), backward)


def add(a, b):
	_check_same_dims(a, b, "add")

	def backward(grad, saved):
		return grad, grad

	return _emit("add", a.data + b.data, (a, b), backward)


def permute(x, axes):
	inverse = tuple(np.argsort(axes))

	def backward(grad, saved):
		return (np.ascontiguousarray(grad.transpose(inverse)),)

	return _emit("permute", np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def filter_affine(x, scale, shift):
	"""Per-filter scale and shift along axis 0: x * scale + shift."""
	c = x.dims[0]
	if scale.dims != (c,) or shift.dims != (c,):
		throw(f"filter_affine: scale/shift dims {scale.dims}/{shift.dims}, expected ({c},)", DimensionError)
	expand = (slice(None),) + (None,) * (x.data.ndim - 1)
	out = (x.data * scale.data[expand] + shift.data[expand]).astype(x.data.dtype)
	_count("filter_affine", x.data.size)
	other_axes = tuple(range(1, x.data.ndim))

	def backward(grad, saved):
		grad_scale = np.sum(grad * saved["input"], axis=other_axes)
		return grad * scale.data[expand], grad_scale, np.sum(grad, axis=other_axes)

	return _emit("filter_affine", out, (x, scale, shift), backward, input=x.data)


def loss_l2(pred, target):
	"""Mean squared error."""
	pred = as_tensor(pred)
	target = as_tensor(target)
	_check_same_dims(pred, target, "loss_l2")
	diff = pred.data - target.data
	out = np.asarray(np.mean(diff * diff), dtype=pred.data.dtype)

	def backward(grad, saved):
		g = grad * 2.0 * saved["diff"] / saved["diff"].size
		return g, -g

	return _emit("loss_l2", out, (pred, target), backward, diff=diff)


def loss_l1(pred, target):
	"""Mean absolute error; subgradient sign(pred - target) / count."""
	pred = as_tensor(pred)
	target = as_tensor(target)
	_check_same_dims(pred, target, "loss_l1")
	diff = pred.data - target.data
	out = np.asarray(np.mean(np.abs(diff)), dtype=pred.data.dtype)

	def backward(grad, saved):
		g = grad * np.sign(saved["diff"]) / saved["diff"].size
		return g, -g

	return _emit("loss_l1", out, (pred, target), backward, diff=diff)


LOSSES = {"l1": loss_l1, "l2": loss_l2}


def get_loss(name):
	if name not in LOSSES:
		throw(f"Unknown loss '{name}'", ConfigurationError)
	return LOSSES[name]


def kink_mask(x, epsilon=1e-5):
	"""Coordinates within epsilon of zero, where a PReLU or |.| is not differentiable."""
	return np.abs(np.asarray(x)) <= 2 * epsilon


@dataclass
class GradCheckResult:
	max_rel_error: float
	worst_input: int
	worst_index: int
	checked: int
	skipped: int

	def passed(self, tolerance=1e-6):
		return self.max_rel_error <= tolerance


def grad_check(fn, inputs, epsilon=1e-5, exclude=None, max_coords=None, seed=0, floor=1e-12):
	"""Compare tape gradients of scalar `fn(*tensors)` with central differences, in double.

	A coordinate whose analytic/numeric gap is below the central-difference
	round-off level for f counts as exact.
	"""
	rng = np.random.default_rng(seed)
	with precision("double"):
		points = [np.array(p, dtype=np.float64) for p in inputs]
		tensors = [Tensor(p, requires_grad=True) for p in points]
		with Tape() as tape:
			value = fn(*tensors)
		validate_oracle(value.data, "f(x)")
		tape.backward(value)
		analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
		roundoff = 64 * np.finfo(np.float64).eps * max(1.0, abs(float(value.data))) / epsilon

		def evaluate(index, flat, delta):
			shifted = [p.copy() for p in points]
			shifted[index].reshape(-1)[flat] += delta
			result = fn(*[Tensor(p) for p in shifted]).data
			validate_oracle(result, f"f(x) at input {index}, coordinate {flat}")
			return float(result)

		worst = (0.0, -1, -1)
		checked = skipped = 0
		for index, point in enumerate(points):
			coords = np.arange(point.size)
			if exclude is not None and exclude[index] is not None:
				mask = np.asarray(exclude[index]).reshape(-1)
				skipped += int(mask.sum())
				coords = coords[~mask]
			if max_coords is not None and coords.size > max_coords:
				coords = np.sort(rng.choice(coords, size=max_coords, replace=False))
			for flat in coords:
				numeric = (evaluate(index, flat, epsilon) - evaluate(index, flat, -epsilon)) / (2 * epsilon)
				exact = float(analytic[index].reshape(-1)[flat])
				gap = abs(exact - numeric)
				error = 0.0 if gap <= roundoff else gap / max(abs(exact), abs(numeric), floor)
				checked += 1
				if error > worst[0]:
					worst = (error, index, int(flat))
	return GradCheckResult(
		max_rel_error=worst[0], worst_input=worst[1], worst_index=worst[2], checked=checked, skipped=skipped
	)


def validate_oracle(value, context):
	if not np.all(np.isfinite(value)):
		throw(f"Gradient oracle failure: non-finite value at {context}", GradientCheckFailure)
