# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

from ftn_cll.ftn_cll.metrics.metrics import network_similarity
from ftn_cll.utils import throw


def execute(filters=None):
	filters = filters or {}
	if not filters.get("banks_a") or not filters.get("banks_b"):
		throw("Similarity report needs the filter banks of both levels")
	data = [
		{"layer": r.layer, "mae": r.mae, "cosine": r.cosine}
		for r in network_similarity(filters["banks_a"], filters["banks_b"])
	]
	return get_columns(), data


def get_columns():
	return [
		{"fieldname": "layer", "label": "Layer", "fieldtype": "Data"},
		{"fieldname": "mae", "label": "MAE", "fieldtype": "Float", "precision": 6},
		{"fieldname": "cosine", "label": "Cosine", "fieldtype": "Float", "precision": 6},
	]
