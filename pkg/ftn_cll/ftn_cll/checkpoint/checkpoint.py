# Copyright (c) 2026, FTN-CLL contributors
# For license information, please see license.txt

"""Versioned binary parameter stores.

Layout, all integers little-endian:

	b"CLL1" | u16 version | u32 header length | UTF-8 JSON header
	u32 entry count
	per entry: u16 name length | UTF-8 name | 4 x u32 dims | float32 payload

The JSON header carries the network spec, the tuning descriptor, free-form
metadata and each entry's original dims (the body pads dims to four with
leading ones).
"""

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ftn_cll.exceptions import (
	BadMagicError,
	CheckpointError,
	DimMismatchError,
	MissingFileError,
	TruncatedCheckpointError,
	ValidationError,
	VersionMismatchError,
)
from ftn_cll.ftn_cll.network.network import NetworkSpec, attach_providers, build_network
from ftn_cll.utils import get_logger, throw

logger = get_logger("checkpoint")

MAGIC = b"CLL1"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")
DIM_SLOTS = 4


@dataclass
class Checkpoint:
	store: OrderedDict
	spec: dict | None = None
	tuning: dict | None = None
	meta: dict = field(default_factory=dict)

	def network_spec(self):
		if not self.spec:
			throw("Checkpoint carries no network spec", CheckpointError)
		return NetworkSpec(**self.spec)


def padded_dims(shape):
	if len(shape) > DIM_SLOTS:
		throw(f"Parameters have at most {DIM_SLOTS} dims, got {shape}", DimMismatchError)
	return (1,) * (DIM_SLOTS - len(shape)) + tuple(int(d) for d in shape)


def encode(store, spec=None, tuning=None, meta=None):
	names = list(store)
	if len(set(names)) != len(names):
		throw("Parameter names must be unique", ValidationError)
	header = {
		"spec": spec,
		"tuning": tuning,
		"meta": meta or {},
		"shapes": {name: list(np.shape(value)) for name, value in store.items()},
	}
	header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
	parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(header_bytes)), header_bytes]
	parts.append(struct.pack("<I", len(store)))
	for name, value in store.items():
		raw = name.encode("utf-8")
		array = np.asarray(value)
		parts.append(struct.pack("<H", len(raw)))
		parts.append(raw)
		parts.append(struct.pack("<4I", *padded_dims(array.shape)))
		parts.append(np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes())
	return b"".join(parts)


class _Reader:
	def __init__(self, data):
		self.data = data
		self.offset = 0

	def take(self, count, what, parameter=None):
		if self.offset + count > len(self.data):
			throw_truncated(what, parameter, count, len(self.data) - self.offset)
		chunk = self.data[self.offset : self.offset + count]
		self.offset += count
		return chunk

	def unpack(self, fmt, what, parameter=None):
		return struct.unpack(fmt, self.take(struct.calcsize(fmt), what, parameter))


def throw_truncated(what, parameter, needed, available):
	subject = f"parameter '{parameter}'" if parameter else what
	raise TruncatedCheckpointError(
		f"Checkpoint truncated in {subject}: needed {needed} bytes, {available} left", parameter=parameter
	)


def decode(data):
	reader = _Reader(data)
	magic = reader.take(len(MAGIC), "magic")
	if magic != MAGIC:
		throw(f"Not a checkpoint: magic {magic!r}, expected {MAGIC!r}", BadMagicError)
	(version,) = reader.unpack("<H", "version")
	if version != FORMAT_VERSION:
		throw(f"Checkpoint format version {version}, this build reads {FORMAT_VERSION}", VersionMismatchError)
	(header_length,) = reader.unpack("<I", "header")
	try:
		header = json.loads(reader.take(header_length, "header").decode("utf-8"))
	except (UnicodeDecodeError, json.JSONDecodeError) as e:
		throw(f"Checkpoint header is not valid JSON: {e}", CheckpointError)
	if not isinstance(header, dict):
		throw(f"Checkpoint header must be a JSON object, got {type(header).__name__}", CheckpointError)
	shapes = header.get("shapes", {})
	(count,) = reader.unpack("<I", "entry count")
	store = OrderedDict()
	for index in range(count):
		(name_length,) = reader.unpack("<H", f"name of entry {index}")
		raw_name = reader.take(name_length, f"name of entry {index}")
		try:
			name = raw_name.decode("utf-8")
		except UnicodeDecodeError:
			throw(f"Name of entry {index} is not valid UTF-8: {raw_name!r}", CheckpointError)
		if name in store:
			throw(f"Duplicate parameter '{name}' in checkpoint", CheckpointError)
		dims = reader.unpack("<4I", "dims", name)
		shape = tuple(shapes.get(name, dims))
		if padded_dims(shape) != dims:
			throw(f"{name}: body dims {dims} disagree with header dims {shape}", DimMismatchError)
		size = int(np.prod(dims))
		payload = reader.take(size * PAYLOAD_DTYPE.itemsize, "payload", name)
		store[name] = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).astype(np.float32).reshape(shape)
	if reader.offset != len(data):
		throw(f"{len(data) - reader.offset} trailing bytes after the last parameter", CheckpointError)
	return Checkpoint(
		store=store, spec=header.get("spec"), tuning=header.get("tuning"), meta=header.get("meta", {})
	)


def save_checkpoint(store, path, spec=None, tuning=None, meta=None):
	data = encode(store, spec=spec, tuning=tuning, meta=meta)
	directory = os.path.dirname(os.path.abspath(path))
	os.makedirs(directory, exist_ok=True)
	partial = f"{path}.partial"
	with open(partial, "wb") as f:
		f.write(data)
	os.replace(partial, path)
	logger.info("Saved %d parameters to %s (%d bytes)", len(store), path, len(data))


def read_checkpoint(path):
	if not os.path.exists(path):
		throw(f"Checkpoint {path} does not exist", MissingFileError)
	with open(path, "rb") as f:
		checkpoint = decode(f.read())
	logger.info("Loaded %d parameters from %s", len(checkpoint.store), path)
	return checkpoint


def load_checkpoint(path):
	return read_checkpoint(path).store


def validate_against_spec(checkpoint):
	"""Main-network entries must have exactly the dims the header's spec implies."""
	spec = checkpoint.network_spec()
	for layer, shape in spec.layer_shapes().items():
		for name, expected in ((f"{layer}.weight", shape), (f"{layer}.bias", (shape[0],))):
			if name not in checkpoint.store:
				throw(f"Checkpoint is missing parameter '{name}'", DimMismatchError)
			if checkpoint.store[name].shape != tuple(expected):
				throw(
					f"{name}: stored dims {checkpoint.store[name].shape}, spec expects {tuple(expected)}",
					DimMismatchError,
				)


def save_network(net, path, meta=None):
	save_checkpoint(net.state_dict(), path, spec=net.spec.as_dict(), tuning=net.tuning, meta=meta)


def load_network(path):
	"""Rebuild the network (and its tuning providers) a checkpoint was saved from."""
	checkpoint = read_checkpoint(path)
	validate_against_spec(checkpoint)
	net = build_network(checkpoint.network_spec(), seed=0)
	tuning = checkpoint.tuning
	if tuning:
		attach_providers(
			net,
			tuning["mode"],
			groups=tuning.get("groups"),
			depth=tuning.get("depth"),
			exclude_last=tuning.get("exclude_last", False),
		)
	expected = net.state_dict()
	for name, value in checkpoint.store.items():
		if name in expected and expected[name].shape != value.shape:
			throw(f"{name}: stored dims {value.shape}, network expects {expected[name].shape}", DimMismatchError)
	net.load_state_dict(checkpoint.store)
	return net, checkpoint
