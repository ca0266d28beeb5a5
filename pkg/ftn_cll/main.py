import argparse
import json
import os
import sys
import time

import numpy as np

from ftn_cll import __version__, hooks
from ftn_cll.config import MODES, get_config
from ftn_cll.exceptions import CllError, ConfigurationError, GradientCheckFailure, exit_code_table
from ftn_cll.ftn_cll.baselines.baselines import DniPair, dni_interpolate, finetune_unconstrained
from ftn_cll.ftn_cll.checkpoint.checkpoint import load_network, save_network
from ftn_cll.ftn_cll.filter_transition.filter_transition import LevelMap, pixel_adaptive_forward
from ftn_cll.ftn_cll.gradcheck.gradcheck import run_gradcheck
from ftn_cll.ftn_cll.image_io.image_io import read_image, write_image
from ftn_cll.ftn_cll.metrics.metrics import alpha_sweep, evaluate_levels, macs_instrumented, psnr
from ftn_cll.ftn_cll.network.network import NetworkSpec, attach_providers, build_network
from ftn_cll.ftn_cll.tensor_core.tensor_core import Tensor
from ftn_cll.ftn_cll.training.training import (
	NOISE_STREAM,
	TRAIN_STREAM,
	VALIDATION_NOISE_STREAM,
	VALIDATION_STREAM,
	SyntheticDataset,
	TrainConfig,
	evaluate_psnr,
	train_phase1,
	train_phase2,
)
from ftn_cll.utils import _dict, get_attr, get_logger, throw, write_csv, write_json

logger = get_logger("main")

PHASE1_CHECKPOINT = "phase1.ckpt"
MACS_MODES = ("ftn", "ftn-gc4", "ftn-gc16", "ftn-deeper", "adafm")


def out_path(config, *parts):
	return os.path.join(config.out_dir, *parts)


def write_report(name, filters, path):
	columns, data = get_attr(hooks.reports[name])(_dict(filters))
	return write_csv(path, columns, data)


def new_run_report(config, command):
	return _dict(
		command=command,
		version=__version__,
		config=config.as_echo(),
		seeds={
			"seed": config.seed,
			"streams": {
				"init": 0,
				"train": TRAIN_STREAM,
				"validation": VALIDATION_STREAM,
				"noise": NOISE_STREAM,
				"validation_noise": VALIDATION_NOISE_STREAM,
			},
		},
		phases=[],
		metrics={},
		timings={},
		outputs=[],
	)


def finish(config, report, started):
	report.timings["total_seconds"] = time.perf_counter() - started
	path = out_path(config, f"report_{report.command.replace('-', '_')}.json")
	report.outputs.append(path)
	write_json(path, report)
	logger.info("%s: report written to %s", report.command, path)
	return report


def phase_summary(result):
	curve = result.curve
	return {
		"label": result.label,
		"phase": result.phase,
		"sigma": result.sigma,
		"steps": result.steps,
		"first_loss": curve[0]["loss"] if curve else None,
		"final_loss": curve[-1]["loss"] if curve else None,
		"val_psnr": result.val_psnr,
		"seconds": result.seconds,
	}


def dataset_for(config):
	return SyntheticDataset(seed=config.seed, patch_size=config.patch_size, channels=config.image_channels)


def tuned_checkpoint(config):
	return config.checkpoint or out_path(config, f"{config.mode}.ckpt")


def cmd_train(config):
	"""Phase 1: train the main network at sigma_low."""
	started = time.perf_counter()
	report = new_run_report(config, "train")
	report.train_config = vars(TrainConfig.from_config(config))
	net = build_network(NetworkSpec.from_config(config), config.seed)
	result = train_phase1(net, dataset_for(config), config)
	path = out_path(config, PHASE1_CHECKPOINT)
	save_network(net, path, meta={"phase": "main", "sigma": config.sigma_low, "seed": config.seed})
	report.phases.append(phase_summary(result))
	report.metrics["val_psnr_sigma_low"] = result.val_psnr
	loss_csv = write_report("loss_curve", {"curve": result.curve}, out_path(config, "loss_phase1.csv"))
	report.outputs += [path, loss_csv]
	return finish(config, report, started)


def cmd_tune(config):
	"""Phase 2 for a provider mode, or the unconstrained fine-tune DNI interpolates towards."""
	started = time.perf_counter()
	report = new_run_report(config, "tune")
	parent = config.checkpoint or out_path(config, PHASE1_CHECKPOINT)
	net, checkpoint = load_network(parent)
	if net.tuning:
		throw(f"{parent} already carries '{net.tuning['mode']}' providers; tune starts from a phase-1 model")
	dataset = dataset_for(config)
	path = out_path(config, f"{config.mode}.ckpt")
	meta = {"parent": parent, "mode": config.mode, "sigma": config.sigma_high, "seed": config.seed}
	if config.mode == "finetune":
		result = finetune_unconstrained(net, dataset, config)
		save_network(result.network, path, meta=meta)
		report.metrics["val_psnr_sigma_high"] = result.val_psnr
		report.metrics["val_psnr_sigma_low_parent"] = evaluate_psnr(net, dataset, config, config.sigma_low)
	else:
		attach_providers(
			net, config.mode, groups=config.ftn_groups, depth=config.ftn_depth, exclude_last=config.ftn_exclude_last
		)
		result = train_phase2(net, dataset, config)
		save_network(net, path, meta=meta)
		report.metrics["val_psnr_sigma_high"] = result.val_psnr
		report.metrics["val_psnr_sigma_low"] = evaluate_psnr(net, dataset, config, config.sigma_low, 0.0)
		report.metrics["tuning_parameters"] = sum(int(np.size(v)) for v in net.tuning_store().values())
	report.metrics["parent_meta"] = checkpoint.meta
	report.phases.append(phase_summary(result))
	loss_csv = out_path(config, f"loss_{'finetune' if config.mode == 'finetune' else 'phase2'}.csv")
	report.outputs += [path, write_report("loss_curve", {"curve": result.curve}, loss_csv)]
	return finish(config, report, started)


def sweep_target(path):
	"""(model_at, network, banks at alpha 0, banks at alpha 1, label) for a tuned or fine-tuned checkpoint."""
	net, checkpoint = load_network(path)
	label = os.path.splitext(os.path.basename(path))[0]
	if net.tuning:
		low = {name: p.effective_filters(0.0) for name, p in net.providers.items()}
		high = {name: p.effective_filters(1.0) for name, p in net.providers.items()}
		return None, net, low, high, label
	parent_path = checkpoint.meta.get("parent")
	if not parent_path:
		throw(f"{path} has neither tuning providers nor a parent checkpoint to blend with", ConfigurationError)
	parent, _ = load_network(parent_path)
	pair = DniPair(parent.main_store(), net.main_store())

	def model_at(alpha):
		model = parent.copy()
		model.load_state_dict(dni_interpolate(pair, alpha))
		return model, 0.0

	low = {name: parent.bank(name) for name in parent.layer_names}
	high = {name: net.bank(name) for name in net.layer_names}
	return model_at, parent, low, high, label


def cmd_sweep(config):
	"""PSNR over the alpha grid for every test level, plus filter similarity between the two levels."""
	started = time.perf_counter()
	report = new_run_report(config, "sweep")
	paths = config.checkpoint_list() or [tuned_checkpoint(config)]
	dataset = dataset_for(config)
	for path in paths:
		model_at, net, low, high, label = sweep_target(path)
		target_dir = config.out_dir if len(paths) == 1 else out_path(config, label)
		result = alpha_sweep(net, dataset, config, model_at=model_at)
		levels = evaluate_levels(net, dataset, config, model_at=model_at)
		report.outputs += [
			write_report("sweep", {"result": result}, os.path.join(target_dir, "sweep.csv")),
			write_report(
				"similarity", {"banks_a": low, "banks_b": high}, os.path.join(target_dir, "similarity.csv")
			),
		]
		report.metrics[label] = {
			"checkpoint": path,
			"argmax_alpha": {str(k): v for k, v in result.argmax_alpha().items()},
			"deviation": {str(k): v for k, v in result.deviations().items()},
			"max_deviation": result.max_deviation(),
			"monotone": result.is_monotone(),
			"best_psnr": {str(s): float(result.psnr[:, j].max()) for j, s in enumerate(result.sigmas)},
			"ideal_line_psnr": [dict(row) for row in levels],
		}
		logger.info("%s: argmax alpha %s", label, result.argmax_alpha())
	return finish(config, report, started)


def level_map_for(config, height, width):
	name = config.levelmap
	if name == "ramp":
		return LevelMap.ramp(height, width)
	if name == "split":
		return LevelMap.split(height, width)
	if name == "constant":
		return LevelMap.constant(height, width, config.alpha)
	level_map = LevelMap.from_image(read_image(name))
	if level_map.shape != (height, width):
		level_map = LevelMap(level_map.resample(height, width))
	return level_map


def cmd_pixel_demo(config):
	"""Per-pixel level control with a ramp, split, constant or image-defined level map."""
	started = time.perf_counter()
	report = new_run_report(config, "pixel-demo")
	path = tuned_checkpoint(config)
	net, _ = load_network(path)
	if not net.tuning:
		throw(f"{path} has no tuning providers; pixel-adaptive control needs them", ConfigurationError)
	clean = None
	if config.input_image:
		image = read_image(config.input_image)
	else:
		noisy, clean = dataset_for(config).validation_set(1, config.image_size, config.sigma_high)
		image = Tensor(noisy)
	height, width = image.dims[2:]
	level_map = level_map_for(config, height, width)
	adaptive = pixel_adaptive_forward(net, image, level_map, strict=bool(config.strict_alpha))
	uniform = net.forward(
		image,
		config.alpha,
		strict=bool(config.strict_alpha),
		allow_extrapolation=bool(config.allow_extrapolation),
	)
	outputs = {
		"input.png": image,
		"levelmap.png": level_map.values,
		"pixel_demo.png": adaptive,
		"global_alpha.png": uniform,
	}
	for name, tensor in outputs.items():
		write_image(tensor, out_path(config, name))
		report.outputs.append(out_path(config, name))
	report.metrics["max_abs_diff_vs_global_alpha"] = float(np.max(np.abs(adaptive.data - uniform.data)))
	report.metrics["levelmap"] = config.levelmap
	if clean is not None:
		report.metrics["psnr_pixel_adaptive"] = psnr(adaptive, clean)
		report.metrics["psnr_global_alpha"] = psnr(uniform, clean)
	return finish(config, report, started)


def cmd_macs(config):
	"""Baseline MACs against the cost models and the instrumented overhead of every tuning mode."""
	started = time.perf_counter()
	report = new_run_report(config, "macs")
	net = build_network(NetworkSpec.from_config(config), config.seed)
	reports = []
	for mode in MACS_MODES:
		tuned = net.copy()
		attach_providers(tuned, mode, groups=config.ftn_groups, depth=config.ftn_depth)
		macs = macs_instrumented(tuned, config.image_size, config.image_size, alpha=config.alpha)
		reports.append(macs)
		report.metrics[mode] = {"by_layer": macs.by_layer, "by_op": macs.by_op, "discrepancy": macs.discrepancy}
	report.metrics["rows"] = [vars(row) for macs in reports for row in macs.rows]
	report.outputs.append(write_report("macs", {"reports": reports}, out_path(config, "macs.csv")))
	return finish(config, report, started)


def cmd_gradcheck(config):
	"""Finite-difference check of every operation and the FTN-wrapped conv layer."""
	started = time.perf_counter()
	report = new_run_report(config, "gradcheck")
	rows = run_gradcheck(
		instances=config.gradcheck_instances,
		epsilon=config.gradcheck_epsilon,
		tolerance=config.gradcheck_tolerance,
		seed=config.seed,
	)
	columns = [
		{"fieldname": "check", "fieldtype": "Data"},
		{"fieldname": "instances", "fieldtype": "Int"},
		{"fieldname": "checked", "fieldtype": "Int"},
		{"fieldname": "skipped", "fieldtype": "Int"},
		{"fieldname": "max_rel_error", "fieldtype": "Float", "precision": 12},
		{"fieldname": "passed", "fieldtype": "Int"},
	]
	path = write_csv(out_path(config, "gradcheck.csv"), columns, rows)
	worst = max(rows, key=lambda r: r.max_rel_error)
	report.metrics["worst_check"] = worst.check
	report.metrics["worst_rel_error"] = worst.max_rel_error
	report.metrics["checks"] = rows
	report.outputs.append(path)
	finish(config, report, started)
	print(f"gradcheck worst relative error {worst.max_rel_error:.3e} ({worst.check})")
	failed = [r.check for r in rows if not r.passed]
	if failed:
		throw(
			f"Gradient check failed for {', '.join(failed)}; worst {worst.max_rel_error:.3e} in {worst.check}",
			GradientCheckFailure,
		)
	return report


def exit_code_epilog():
	lines = ["exit codes:", "  0  success"]
	lines += [f"  {code:<2} {name}" for code, name in exit_code_table()]
	lines.append('errors print one line to stderr: error code=<n> kind=<Name> message="<text>"')
	return "\n".join(lines)


def get_parser():
	common = argparse.ArgumentParser(add_help=False)
	common.add_argument("--config", help="key = value run configuration file")
	common.add_argument("--seed", type=int)
	common.add_argument("--out", dest="out_dir", help="output directory")
	common.add_argument("--mode", choices=MODES)
	common.add_argument("--alpha", type=float, help="global level for tuning and pixel-demo")
	common.add_argument("--deterministic", action="store_const", const=1, help="serial evaluation")
	common.add_argument("--checkpoint", help="input checkpoint")
	common.add_argument("--checkpoints", help="comma-separated checkpoints for sweep")
	common.add_argument("--levelmap", help="ramp, split, constant or a grayscale image path")

	parser = argparse.ArgumentParser(
		prog="ftn-cll",
		description="Filter transition networks for continuous-level denoising",
		epilog=exit_code_epilog(),
		formatter_class=argparse.RawDescriptionHelpFormatter,
	)
	parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
	subparsers = parser.add_subparsers(dest="command", required=True)
	for name, method in hooks.commands.items():
		handler = get_attr(method)
		subparsers.add_parser(
			name,
			parents=[common],
			help=(handler.__doc__ or "").strip().splitlines()[0] if handler.__doc__ else None,
			epilog=exit_code_epilog(),
			formatter_class=argparse.RawDescriptionHelpFormatter,
		)
	return parser


def format_error(error):
	return f"error code={error.exit_code} kind={type(error).__name__} message={json.dumps(str(error))}"


def main(argv=None):
	args = get_parser().parse_args(argv)
	overrides = {
		key: getattr(args, key)
		for key in ("seed", "out_dir", "mode", "alpha", "deterministic", "checkpoint", "checkpoints", "levelmap")
	}
	try:
		config = get_config(args.config, **overrides)
		get_attr(hooks.commands[args.command])(config)
	except CllError as e:
		print(format_error(e), file=sys.stderr)
		return e.exit_code
	return 0


if __name__ == "__main__":
	sys.exit(main())
