# Copyright (c) 2026, FTN-CLL contributors
# See license.txt

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from ftn_cll.config import get_config
from ftn_cll.exceptions import ConfigurationError, NonFiniteError, RangeError, TrainingFailure
from ftn_cll.ftn_cll.network.network import NetworkSpec, attach_providers, build_network
from ftn_cll.ftn_cll.tensor_core.tensor_core import Tape, Tensor, conv2d, loss_l2
from ftn_cll.ftn_cll.training.training import (
	NoiseLevel,
	PhaseTrainer,
	Sgd,
	SyntheticDataset,
	TrainConfig,
	adam_step,
	evaluate_psnr,
	make_optimizer,
	new_adam_state,
	sample_batch,
	train_phase1,
	train_phase2,
)
from ftn_cll.utils import store_hash


def tiny_config(**overrides):
	settings = dict(
		channels=4,
		num_blocks=1,
		batch_size=2,
		patch_size=8,
		val_images=2,
		image_size=8,
		phase1_steps=3,
		phase2_steps=3,
		log_every=1,
	)
	settings.update(overrides)
	return get_config(**settings)


class TestNoiseLevel(unittest.TestCase):
	def test_sigma_is_on_unit_scale(self):
		self.assertAlmostEqual(NoiseLevel(51).sigma, 0.2)
		self.assertEqual(NoiseLevel(0).sigma, 0.0)

	def test_negative_level(self):
		with self.assertRaises(RangeError):
			NoiseLevel(-1)


class TestDataset(unittest.TestCase):
	def test_images_are_in_unit_range(self):
		images = SyntheticDataset(seed=1, patch_size=16).clean_batch(4)
		self.assertEqual(images.shape, (4, 1, 16, 16))
		self.assertGreaterEqual(images.min(), 0.0)
		self.assertLessEqual(images.max(), 1.0)

	def test_batches_are_seeded(self):
		config = tiny_config()
		first = sample_batch(SyntheticDataset(5, 8), config, 20)
		second = sample_batch(SyntheticDataset(5, 8), config, 20)
		other = sample_batch(SyntheticDataset(6, 8), config, 20)
		assert_array_equal(first[0].data, second[0].data)
		assert_array_equal(first[1].data, second[1].data)
		self.assertFalse(np.array_equal(first[1].data, other[1].data))

	def test_consecutive_batches_differ(self):
		dataset = SyntheticDataset(0, 8)
		config = tiny_config()
		first = sample_batch(dataset, config, 20)[1].data
		second = sample_batch(dataset, config, 20)[1].data
		self.assertFalse(np.array_equal(first, second))

	def test_zero_sigma_is_noise_free(self):
		noisy, clean = sample_batch(SyntheticDataset(2, 8), tiny_config(), 0)
		assert_array_equal(noisy.data, clean.data)

	def test_noise_std_matches_sigma(self):
		# 1000 patches of 32x32: just over a million noise samples
		config = tiny_config(batch_size=1000, patch_size=32)
		noisy, clean = sample_batch(SyntheticDataset(4, 32), config, 20)
		noise = noisy.data.astype(np.float64) - clean.data
		self.assertGreaterEqual(noise.size, 10**6)
		self.assertAlmostEqual(noise.std() / NoiseLevel(20).sigma, 1.0, delta=0.01)

	def test_noise_is_not_clipped(self):
		noisy, clean = sample_batch(SyntheticDataset(0, 16), tiny_config(batch_size=8, patch_size=16), 80)
		self.assertTrue(noisy.data.min() < 0.0 or noisy.data.max() > 1.0)
		self.assertGreaterEqual(clean.data.min(), 0.0)

	def test_validation_noise_is_shared_across_levels(self):
		dataset = SyntheticDataset(3, 8)
		low, clean = dataset.validation_set(2, 8, 20)
		high, clean_again = dataset.validation_set(2, 8, 40)
		assert_array_equal(clean, clean_again)
		assert_allclose(high - clean, 2.0 * (low - clean), rtol=1e-4, atol=1e-5)


class TestOptimizers(unittest.TestCase):
	def test_first_adam_step(self):
		params = {"w": np.array([1.0, 2.0])}
		state = new_adam_state()
		adam_step(params, {"w": np.array([0.5, -4.0])}, state, lr=0.1)
		# bias correction makes the first step lr * sign(grad)
		assert_allclose(params["w"], [0.9, 2.1], rtol=1e-6)
		self.assertEqual(state.t, 1)

	def test_zero_gradient_leaves_parameters(self):
		params = {"w": np.array([1.5])}
		state = new_adam_state()
		for _ in range(3):
			adam_step(params, {"w": np.zeros(1)}, state, lr=0.1)
		assert_array_equal(params["w"], [1.5])
		self.assertEqual(state.t, 3)

	def test_non_finite_gradient_is_rejected_before_any_update(self):
		params = {"a": np.array([1.0]), "b": np.array([2.0])}
		state = new_adam_state()
		with self.assertRaises(NonFiniteError):
			adam_step(params, {"a": np.array([0.1]), "b": np.array([np.nan])}, state, lr=0.1)
		assert_array_equal(params["a"], [1.0])
		self.assertEqual(state.t, 0)

	def test_sgd(self):
		params = {"w": np.array([1.0])}
		Sgd(0.5).step(params, {"w": np.array([2.0])})
		assert_array_equal(params["w"], [0.0])
		with self.assertRaises(NonFiniteError):
			Sgd(0.5).step(params, {"w": np.array([np.inf])})

	def test_adam_minimises_a_scalar_quadratic(self):
		w = Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
		target = Tensor(np.array([3.0]), dtype=np.float64)
		state = new_adam_state()
		for _ in range(100):
			with Tape() as tape:
				loss = loss_l2(w, target)
			tape.backward(loss)
			adam_step({"w": w.data}, {"w": w.grad}, state, lr=0.1)
			w.zero_grad()
		self.assertLess(abs(float(w.data[0]) - 3.0), 0.1)

	def test_one_sgd_step_on_a_pointwise_conv(self):
		weight = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True, dtype=np.float64)
		image = Tensor(np.ones((1, 1, 1, 1)), dtype=np.float64)
		with Tape() as tape:
			loss = loss_l2(conv2d(image, weight), Tensor(np.zeros((1, 1, 1, 1)), dtype=np.float64))
		tape.backward(loss)
		# d/dw (w x)^2 = 2 w x^2 = 2
		self.assertAlmostEqual(float(weight.grad.reshape(-1)[0]), 2.0)
		Sgd(0.1).step({"w": weight.data}, {"w": weight.grad})
		self.assertAlmostEqual(float(weight.data.reshape(-1)[0]), 0.8, places=12)

	def test_make_optimizer(self):
		self.assertIsInstance(make_optimizer(tiny_config(optimizer="sgd"), 0.1), Sgd)
		adam = make_optimizer(tiny_config(beta1=0.5), 0.1)
		self.assertEqual(adam.betas, (0.5, 0.999))


class TestTrainConfig(unittest.TestCase):
	def test_from_run_config(self):
		config = TrainConfig.from_config(tiny_config(seed=7))
		self.assertEqual(config.seed, 7)
		self.assertEqual(config.batch_size, 2)

	def test_rejects_bad_learning_rate(self):
		with self.assertRaises(ConfigurationError):
			TrainConfig(lr_phase1=0)


class TestPhases(unittest.TestCase):
	def setUp(self):
		self.config = tiny_config()
		self.spec = NetworkSpec.from_config(self.config)

	def test_phase1_moves_main_parameters(self):
		net = build_network(self.spec, seed=0)
		before = store_hash(net.main_store())
		result = train_phase1(net, SyntheticDataset(0, 8), self.config)
		self.assertNotEqual(store_hash(net.main_store()), before)
		self.assertEqual([row["step"] for row in result.curve], [0, 1, 2])
		self.assertTrue(np.isfinite(result.val_psnr))
		self.assertEqual(result.sigma, 20.0)

	def test_phase1_is_deterministic(self):
		first = build_network(self.spec, seed=0)
		second = build_network(self.spec, seed=0)
		train_phase1(first, SyntheticDataset(0, 8), self.config)
		train_phase1(second, SyntheticDataset(0, 8), self.config)
		self.assertEqual(store_hash(first.state_dict()), store_hash(second.state_dict()))

	def test_phase2_freezes_main_network(self):
		net = build_network(self.spec, seed=0)
		train_phase1(net, SyntheticDataset(0, 8), self.config)
		attach_providers(net, "ftn")
		main_before = store_hash(net.main_store())
		tuning_before = store_hash(net.tuning_store())
		result = train_phase2(net, SyntheticDataset(0, 8), self.config)
		self.assertEqual(store_hash(net.main_store()), main_before)
		self.assertNotEqual(store_hash(net.tuning_store()), tuning_before)
		self.assertEqual(result.phase, "tuning")
		self.assertEqual(result.sigma, 80.0)

	def test_phase2_starts_at_the_phase1_network(self):
		net = build_network(self.spec, seed=0)
		train_phase1(net, SyntheticDataset(0, 8), self.config)
		tuned = attach_providers(net.copy(), "ftn")
		noisy, clean = sample_batch(SyntheticDataset(1, 8), self.config, self.config.sigma_high)
		plain_loss = float(loss_l2(net.forward(noisy), clean).data)
		tuned_loss = float(loss_l2(tuned.forward(noisy, 1.0), clean).data)
		self.assertAlmostEqual(tuned_loss, plain_loss, places=6)
		dataset = SyntheticDataset(0, 8)
		result = train_phase2(tuned, dataset, self.config, steps=0)
		plain_psnr = evaluate_psnr(net, dataset, self.config, self.config.sigma_high)
		self.assertAlmostEqual(result.val_psnr, plain_psnr, places=4)

	def test_phase2_needs_providers(self):
		with self.assertRaises(ConfigurationError):
			train_phase2(build_network(self.spec), SyntheticDataset(0, 8), self.config)

	def test_zero_steps_only_evaluates(self):
		net = build_network(self.spec, seed=0)
		before = store_hash(net.main_store())
		result = train_phase1(net, SyntheticDataset(0, 8), self.config, steps=0)
		self.assertEqual(result.curve, [])
		self.assertEqual(store_hash(net.main_store()), before)

	def test_non_finite_loss_stops_training(self):
		net = build_network(self.spec, seed=0)
		net.bank("head").weight.data[...] = np.nan
		with self.assertRaises(TrainingFailure):
			train_phase1(net, SyntheticDataset(0, 8), self.config)

	def test_trainer_validation(self):
		net = build_network(self.spec)
		trainer = PhaseTrainer(net, SyntheticDataset(), self.config, "main", sigma=20, steps=-1, lr=1e-3)
		with self.assertRaises(ConfigurationError):
			trainer.run()
		trainer = PhaseTrainer(net, SyntheticDataset(), self.config, "both", sigma=20, steps=1, lr=1e-3)
		with self.assertRaises(ConfigurationError):
			trainer.run()


if __name__ == "__main__":
	unittest.main()
