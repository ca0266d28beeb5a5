# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

from ftn_cll.utils import throw


def execute(filters=None):
	"""sweep.csv: one row per (alpha, sigma) cell, sigma-major."""
	filters = filters or {}
	result = filters.get("result")
	if result is None:
		throw("Sweep report needs a sweep result")
	result.validate()
	return get_columns(), result.rows()


def get_columns():
	return [
		{"fieldname": "alpha", "label": "Alpha", "fieldtype": "Float", "precision": 2},
		{"fieldname": "sigma", "label": "Sigma", "fieldtype": "Float", "precision": 1},
		{"fieldname": "psnr", "label": "PSNR (dB)", "fieldtype": "Float", "precision": 4},
	]
