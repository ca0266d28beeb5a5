# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt


def execute(filters=None):
	filters = filters or {}
	return get_columns(), list(filters.get("curve") or [])


def get_columns():
	return [
		{"fieldname": "step", "label": "Step", "fieldtype": "Int"},
		{"fieldname": "loss", "label": "Loss", "fieldtype": "Float", "precision": 8},
	]
