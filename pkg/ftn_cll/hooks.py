app_name = "ftn_cll"
app_title = "FTN Continuous Level"
app_publisher = "FTN-CLL contributors"
app_description = "Filter transition networks for continuous-level image denoising"
app_license = "mit"

# Command line
# ------------
# subcommand -> handler

commands = {
	"train": "ftn_cll.main.cmd_train",
	"tune": "ftn_cll.main.cmd_tune",
	"sweep": "ftn_cll.main.cmd_sweep",
	"pixel-demo": "ftn_cll.main.cmd_pixel_demo",
	"macs": "ftn_cll.main.cmd_macs",
	"gradcheck": "ftn_cll.main.cmd_gradcheck",
}

# Tuning modes
# ------------
# provider None means the whole main network is fine-tuned (interpolated afterwards)

tuning_modes = {
	"ftn": {"provider": "ftn", "groups": 1, "depth": 2},
	"ftn-gc4": {"provider": "ftn", "groups": 4, "depth": 2},
	"ftn-gc16": {"provider": "ftn", "groups": 16, "depth": 2},
	"ftn-deeper": {"provider": "ftn", "groups": 1, "depth": 3},
	"adafm": {"provider": "adafm"},
	"finetune": {"provider": None},
}

provider_attachers = {
	"ftn": "ftn_cll.ftn_cll.filter_transition.filter_transition.attach_ftn",
	"adafm": "ftn_cll.ftn_cll.baselines.baselines.attach_adafm",
}

# Reports
# -------

reports = {
	"sweep": "ftn_cll.ftn_cll.report.sweep_report.sweep_report.execute",
	"similarity": "ftn_cll.ftn_cll.report.similarity_report.similarity_report.execute",
	"macs": "ftn_cll.ftn_cll.report.macs_report.macs_report.execute",
	"loss_curve": "ftn_cll.ftn_cll.report.loss_curve_report.loss_curve_report.execute",
}
