# Copyright (c) 2026, FTN-CLL contributors
# See license.txt

import os
import shutil
import tempfile
import unittest

import numpy as np

from ftn_cll.exceptions import ValidationError
from ftn_cll.ftn_cll.metrics.metrics import SweepResult
from ftn_cll.ftn_cll.report.sweep_report.sweep_report import execute
from ftn_cll.utils import write_csv


class TestSweepReport(unittest.TestCase):
	def setUp(self):
		self.tmp = tempfile.mkdtemp()
		self.result = SweepResult(
			alphas=[0.0, 0.5, 1.0],
			sigmas=[20.0, 80.0],
			psnr=np.array([[30.0, 20.0], [29.0, 22.5], [28.0, 24.123456]]),
			sigma_low=20.0,
			sigma_high=80.0,
		)

	def tearDown(self):
		shutil.rmtree(self.tmp)

	def test_fixed_precision_csv(self):
		columns, data = execute({"result": self.result})
		path = write_csv(os.path.join(self.tmp, "sweep.csv"), columns, data)
		with open(path, encoding="utf-8") as f:
			lines = f.read().splitlines()
		self.assertEqual(lines[0], "alpha,sigma,psnr")
		self.assertEqual(lines[1], "0.00,20.0,30.0000")
		self.assertEqual(lines[-1], "1.00,80.0,24.1235")
		self.assertEqual(len(lines), 7)

	def test_needs_a_result(self):
		with self.assertRaises(ValidationError):
			execute({})


if __name__ == "__main__":
	unittest.main()
