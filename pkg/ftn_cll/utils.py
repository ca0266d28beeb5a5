import csv
import hashlib
import importlib
import json
import logging
import os

import numpy as np

from ftn_cll.exceptions import ValidationError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _dict(dict):
	"""dict with attribute access, the way settings and results are passed around"""

	def __getattr__(self, key):
		try:
			return self[key]
		except KeyError:
			raise AttributeError(key)

	def __setattr__(self, key, value):
		self[key] = value

	def copy(self):
		return _dict(dict(self))


def throw(msg, exc=ValidationError):
	raise exc(msg)


def flt(value, precision=None):
	"""Convert to float, treating None/"" as 0; round when `precision` is given."""
	if value is None or value == "":
		return 0.0
	num = float(value)
	if precision is not None:
		num = round(num, precision)
	return num


def cint(value):
	if value is None or value == "":
		return 0
	return int(float(value))


def get_attr(method_string):
	"""Resolve a dotted path from `hooks.py` into the object it names."""
	modulename, _, attrname = method_string.rpartition(".")
	return getattr(importlib.import_module(modulename), attrname)


def get_logger(module=None):
	logger = logging.getLogger("ftn_cll" if not module else f"ftn_cll.{module}")
	root = logging.getLogger("ftn_cll")
	if not root.handlers:
		handler = logging.StreamHandler()
		handler.setFormatter(logging.Formatter(LOG_FORMAT))
		root.addHandler(handler)
		root.setLevel(os.environ.get("CLL_LOG_LEVEL", "INFO").upper())
		root.propagate = False
	return logger


def seeded_rng(seed, stream=0):
	"""Independent generator for (seed, stream); streams never overlap for one seed."""
	return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),)))


def store_hash(store):
	"""sha256 over names, shapes and float32 bytes of an ordered parameter store."""
	digest = hashlib.sha256()
	for name, value in store.items():
		array = np.ascontiguousarray(value, dtype=np.float32)
		digest.update(name.encode("utf-8"))
		digest.update(str(array.shape).encode("ascii"))
		digest.update(array.tobytes())
	return digest.hexdigest()


def worker_count(config=None):
	"""Sweep workers: `threads` from the run config or the CPU count, capped by CLL_THREADS; 1 when deterministic."""
	if config and cint(config.get("deterministic")):
		return 1
	threads = (cint(config.get("threads")) if config else 0) or os.cpu_count() or 1
	cap = cint(os.environ.get("CLL_THREADS"))
	if cap > 0:
		threads = min(threads, cap)
	return max(1, threads)


def write_csv(path, columns, data):
	"""Write report rows; `columns` follow the report convention (fieldname, fieldtype, precision)."""
	os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
	with open(path, "w", newline="", encoding="utf-8") as f:
		writer = csv.writer(f, lineterminator="\n")
		writer.writerow([col["fieldname"] for col in columns])
		for row in data:
			writer.writerow([format_value(row.get(col["fieldname"]), col) for col in columns])
	return path


def format_value(value, column):
	fieldtype = column.get("fieldtype", "Data")
	if fieldtype == "Float":
		return f"{flt(value):.{column.get('precision', 6)}f}"
	if fieldtype == "Int":
		return str(cint(value))
	return "" if value is None else str(value)


def read_csv(path):
	with open(path, newline="", encoding="utf-8") as f:
		return [_dict(row) for row in csv.DictReader(f)]


def _json_default(value):
	if isinstance(value, np.ndarray):
		return value.tolist()
	if isinstance(value, np.generic):
		return value.item()
	raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path, data):
	os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
	with open(path, "w", encoding="utf-8") as f:
		json.dump(data, f, indent=1, sort_keys=True, default=_json_default)
		f.write("\n")
