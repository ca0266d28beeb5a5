# Copyright (c) 2026, FTN-CLL contributors
# See license.txt

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from ftn_cll.exceptions import ConfigurationError, DimensionError, NonFiniteError, RangeError, ValidationError
from ftn_cll.ftn_cll.network.network import (
	MAIN_SLOPE,
	FilterBank,
	NetworkSpec,
	attach_providers,
	build_network,
	collect_parameters,
)
from ftn_cll.ftn_cll.tensor_core.tensor_core import Tape, Tensor, loss_l2
from ftn_cll.utils import store_hash


def small_spec():
	return NetworkSpec(channels=4, num_blocks=1, kernel_size=3)


class TestNetworkSpec(unittest.TestCase):
	def test_layer_names_and_shapes(self):
		spec = NetworkSpec(channels=8, num_blocks=2)
		self.assertEqual(
			spec.layer_names(),
			["head", "blocks.0.conv1", "blocks.0.conv2", "blocks.1.conv1", "blocks.1.conv2", "tail"],
		)
		shapes = spec.layer_shapes()
		self.assertEqual(shapes["head"], (8, 1, 3, 3))
		self.assertEqual(shapes["blocks.1.conv2"], (8, 8, 3, 3))
		self.assertEqual(shapes["tail"], (1, 8, 3, 3))

	def test_default_parameter_count(self):
		self.assertEqual(NetworkSpec().parameter_count(), 160 + 8 * 2320 + 145)

	def test_rejects_even_kernel(self):
		with self.assertRaises(ConfigurationError):
			NetworkSpec(kernel_size=4)

	def test_rejects_channel_mismatch(self):
		with self.assertRaises(ConfigurationError):
			NetworkSpec(in_channels=1, out_channels=3)


class TestFilterBank(unittest.TestCase):
	def test_bias_must_match_filters(self):
		with self.assertRaises(DimensionError):
			FilterBank.from_arrays(np.zeros((4, 1, 3, 3)), np.zeros(3))

	def test_kernel_must_be_odd(self):
		with self.assertRaises(DimensionError):
			FilterBank.from_arrays(np.zeros((4, 1, 2, 2)), np.zeros(4))


class TestNetwork(unittest.TestCase):
	def setUp(self):
		self.net = build_network(small_spec(), seed=4)
		self.image = np.random.default_rng(0).uniform(size=(2, 1, 12, 12)).astype(np.float32)

	def test_seeded_build_is_deterministic(self):
		again = build_network(small_spec(), seed=4)
		other = build_network(small_spec(), seed=5)
		self.assertEqual(store_hash(self.net.main_store()), store_hash(again.main_store()))
		self.assertNotEqual(store_hash(self.net.main_store()), store_hash(other.main_store()))

	def test_biases_start_at_zero(self):
		for name in self.net.layer_names:
			self.assertFalse(np.any(self.net.bank(name).bias.data))

	def test_forward_keeps_image_dims(self):
		out = self.net.forward(self.image)
		self.assertEqual(out.dims, self.image.shape)
		self.assertEqual(out.data.dtype, np.float32)

	def test_forward_rejects_wrong_channels(self):
		with self.assertRaises(DimensionError):
			self.net.forward(np.zeros((1, 3, 8, 8), dtype=np.float32))

	def test_zero_tail_is_global_skip(self):
		self.net.bank("tail").weight.data[...] = 0
		assert_array_equal(self.net.forward(self.image).data, self.image)

	def test_output_is_local(self):
		# four 3x3 convolutions: a pixel only reaches outputs within distance 4
		nudged = self.image.copy()
		nudged[:, :, 0, 0] += 1.0
		before = self.net.forward(self.image).data
		after = self.net.forward(nudged).data
		assert_allclose(after[:, :, 5:, 5:], before[:, :, 5:, 5:], atol=1e-6)
		self.assertFalse(np.allclose(after[:, :, :2, :2], before[:, :, :2, :2]))

	def test_plain_network_ignores_alpha(self):
		assert_array_equal(self.net.forward(self.image, 0.0).data, self.net.forward(self.image, 0.7).data)

	def test_state_dict_roundtrip(self):
		other = build_network(small_spec(), seed=9)
		other.load_state_dict(self.net.state_dict())
		self.assertEqual(store_hash(other.state_dict()), store_hash(self.net.state_dict()))
		assert_array_equal(other.forward(self.image).data, self.net.forward(self.image).data)

	def test_load_state_dict_rejects_missing_names(self):
		store = self.net.state_dict()
		store.pop("tail.bias")
		with self.assertRaises(ValidationError):
			self.net.load_state_dict(store)

	def test_forward_rejects_non_finite_input(self):
		self.image[0, 0, 3, 3] = np.nan
		with self.assertRaises(NonFiniteError):
			self.net.forward(self.image)

	def test_load_state_dict_rejects_non_finite_values(self):
		before = store_hash(self.net.state_dict())
		store = {name: np.array(value) for name, value in self.net.state_dict().items()}
		store["head.bias"][...] = 0.5
		store["tail.weight"][0, 0, 1, 1] = np.inf
		with self.assertRaises(NonFiniteError):
			self.net.load_state_dict(store)
		self.assertEqual(store_hash(self.net.state_dict()), before)

	def test_main_activation_slope_is_fixed(self):
		self.assertEqual(MAIN_SLOPE, 0.2)
		self.assertTrue(all(name.endswith((".weight", ".bias")) for name in self.net.main_store()))

	def test_copy_is_independent(self):
		twin = self.net.copy()
		twin.bank("head").weight.data[...] += 1.0
		self.assertNotEqual(store_hash(twin.main_store()), store_hash(self.net.main_store()))


class TestParameters(unittest.TestCase):
	def setUp(self):
		self.net = attach_providers(build_network(small_spec(), seed=1), "ftn")

	def test_phases_are_disjoint(self):
		main = {id(p) for _, p in collect_parameters(self.net, "main")}
		tuning = {id(p) for _, p in collect_parameters(self.net, "tuning")}
		self.assertTrue(main)
		self.assertTrue(tuning)
		self.assertFalse(main & tuning)

	def test_tuning_needs_providers(self):
		with self.assertRaises(ConfigurationError):
			collect_parameters(build_network(small_spec()), "tuning")

	def test_unknown_phase(self):
		with self.assertRaises(ConfigurationError):
			collect_parameters(self.net, "both")

	def test_set_phase_switches_trainable_set(self):
		self.net.set_phase("tuning")
		self.assertTrue(all(p.requires_grad for _, p in collect_parameters(self.net, "tuning")))
		self.assertFalse(any(p.requires_grad for _, p in collect_parameters(self.net, "main")))
		self.net.set_phase("main")
		self.assertTrue(all(p.requires_grad for _, p in collect_parameters(self.net, "main")))
		self.assertFalse(any(p.requires_grad for _, p in collect_parameters(self.net, "tuning")))

	def test_tuning_store_names(self):
		names = list(self.net.tuning_store())
		self.assertIn("tuning.head.stage0.weight", names)
		self.assertIn("tuning.tail.second_bias", names)

	def test_unknown_mode(self):
		with self.assertRaises(ConfigurationError):
			attach_providers(build_network(small_spec()), "ftn-spatial")

	def test_finetune_attaches_nothing(self):
		with self.assertRaises(ConfigurationError):
			attach_providers(build_network(small_spec()), "finetune")

	def test_effective_filters_cached_outside_tape(self):
		provider = self.net.providers["head"]
		first = provider.effective_filters(0.5)
		self.assertIs(provider.effective_filters(0.5), first)
		with Tape():
			self.assertIsNot(provider.effective_filters(0.5), first)
		provider.invalidate()
		self.assertIsNot(provider.effective_filters(0.5), first)

	def test_range_policy_holds_for_cached_filters(self):
		image = np.random.default_rng(3).uniform(size=(1, 1, 8, 8)).astype(np.float32)
		self.net.forward(image, 1.5, allow_extrapolation=True)
		with self.assertRaises(RangeError):
			self.net.forward(image, 1.5)
		self.net.forward(image, 1.3, strict=False)
		with self.assertRaises(RangeError):
			self.net.forward(image, 1.3)
		with self.assertRaises(RangeError):
			self.net.providers["head"].effective_filters(-0.2)

	def test_lenient_alpha_reuses_the_clamped_filters(self):
		provider = self.net.providers["head"]
		self.assertIs(provider.effective_filters(1.4, strict=False), provider.effective_filters(1.0))

	def test_tuned_gradient_reaches_ftn_weights(self):
		self.net.set_phase("tuning")
		image = Tensor(np.random.default_rng(2).uniform(size=(1, 1, 8, 8)))
		with Tape() as tape:
			out = self.net.forward(image, 1.0)
			loss = loss_l2(out, Tensor(np.zeros_like(out.data)))
		tape.backward(loss)
		grads = [p.grad for _, p in collect_parameters(self.net, "tuning")]
		self.assertTrue(any(g is not None and np.any(g) for g in grads))
		self.assertTrue(all(p.grad is None for _, p in collect_parameters(self.net, "main")))


if __name__ == "__main__":
	unittest.main()
