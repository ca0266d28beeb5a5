# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

from ftn_cll.utils import throw


def execute(filters=None):
	"""macs.csv from one or more MacsReports; shared rows (baseline, cost models) appear once."""
	filters = filters or {}
	reports = filters.get("reports")
	if not reports:
		throw("MACs report needs at least one instrumented report")
	data, seen = [], set()
	for report in reports:
		for row in report.rows:
			if row.component in seen:
				continue
			seen.add(row.component)
			data.append(
				{
					"component": row.component,
					"macs": row.macs,
					"overhead_pct": row.overhead_pct,
					"params": row.params,
				}
			)
	return get_columns(), data


def get_columns():
	return [
		{"fieldname": "component", "label": "Component", "fieldtype": "Data"},
		{"fieldname": "macs", "label": "MACs", "fieldtype": "Int"},
		{"fieldname": "overhead_pct", "label": "Overhead (%)", "fieldtype": "Float", "precision": 4},
		{"fieldname": "params", "label": "Parameters", "fieldtype": "Int"},
	]
