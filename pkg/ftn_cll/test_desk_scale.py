# Copyright (c) 2026, FTN-CLL contributors
# See license.txt

"""Full-budget runs on the default configuration; minutes of CPU, so opt-in with CLL_DESK_SCALE=1."""

import os
import unittest

from ftn_cll.config import get_config
from ftn_cll.ftn_cll.baselines.baselines import finetune_unconstrained, train_from_scratch
from ftn_cll.ftn_cll.metrics.metrics import alpha_sweep, network_similarity
from ftn_cll.ftn_cll.network.network import NetworkSpec, attach_providers, build_network
from ftn_cll.ftn_cll.training.training import SyntheticDataset, evaluate_psnr, train_phase1, train_phase2
from ftn_cll.utils import store_hash


def level_banks(net):
	return (
		{name: p.effective_filters(0.0) for name, p in net.providers.items()},
		{name: p.effective_filters(1.0) for name, p in net.providers.items()},
	)


@unittest.skipUnless(os.environ.get("CLL_DESK_SCALE") == "1", "set CLL_DESK_SCALE=1 for full-budget runs")
class TestDeskScale(unittest.TestCase):
	@classmethod
	def setUpClass(cls):
		cls.config = get_config()
		cls.spec = NetworkSpec.from_config(cls.config)
		cls.dataset = SyntheticDataset(cls.config.seed, cls.config.patch_size)
		cls.phase1 = build_network(cls.spec, cls.config.seed)
		train_phase1(cls.phase1, SyntheticDataset(cls.config.seed, cls.config.patch_size), cls.config)
		cls.phase1_hash = store_hash(cls.phase1.main_store())
		cls.tuned = {}
		for mode in ("ftn", "ftn-gc16"):
			net = attach_providers(cls.phase1.copy(), mode)
			train_phase2(net, SyntheticDataset(cls.config.seed, cls.config.patch_size), cls.config)
			cls.tuned[mode] = net

	def test_tuning_leaves_phase1_filters_alone(self):
		for net in self.tuned.values():
			self.assertEqual(store_hash(net.main_store()), self.phase1_hash)

	def test_ftn_reaches_the_second_level(self):
		config = self.config
		budget = config.phase1_steps + config.phase2_steps
		scratch = train_from_scratch(self.spec, self.dataset, config, config.sigma_high, budget).val_psnr
		ftn = evaluate_psnr(self.tuned["ftn"], self.dataset, config, config.sigma_high, 1.0)
		phase1 = evaluate_psnr(self.phase1, self.dataset, config, config.sigma_high, 0.0)
		self.assertGreaterEqual(ftn, scratch - 0.5)
		self.assertGreaterEqual(ftn - phase1, 1.0)

	def test_similarity_ordering(self):
		finetuned = finetune_unconstrained(self.phase1, self.dataset, self.config).network
		rows = {
			"ftn-gc16": network_similarity(*level_banks(self.tuned["ftn-gc16"]))[-1],
			"ftn": network_similarity(*level_banks(self.tuned["ftn"]))[-1],
			"finetune": network_similarity(*level_banks_pair(self.phase1, finetuned))[-1],
		}
		self.assertGreater(rows["ftn-gc16"].cosine, rows["ftn"].cosine)
		self.assertGreater(rows["ftn"].cosine, rows["finetune"].cosine)
		self.assertLess(rows["ftn-gc16"].mae, rows["ftn"].mae)
		self.assertLess(rows["ftn"].mae, rows["finetune"].mae)

	def test_argmax_alpha_follows_the_level(self):
		result = alpha_sweep(self.tuned["ftn-gc16"], self.dataset, self.config)
		best = result.argmax_alpha()
		self.assertTrue(result.is_monotone(), best)
		self.assertAlmostEqual(best[40.0], 1 / 3, delta=0.2)
		self.assertAlmostEqual(best[60.0], 2 / 3, delta=0.2)


def level_banks_pair(low, high):
	return (
		{name: low.bank(name) for name in low.layer_names},
		{name: high.bank(name) for name in high.layer_names},
	)


if __name__ == "__main__":
	unittest.main()
