class CllError(Exception):
	"""Base error. `exit_code` is what the command line returns when this escapes a command."""

	exit_code = 1


class ValidationError(CllError):
	exit_code = 2


class ConfigurationError(ValidationError):
	exit_code = 3


class DimensionError(ValidationError):
	exit_code = 4


class RangeError(ValidationError):
	exit_code = 5


class TapeCorruptionError(CllError):
	exit_code = 6


class NonFiniteError(CllError):
	exit_code = 7


class GradientCheckFailure(CllError):
	exit_code = 8


class TrainingFailure(CllError):
	exit_code = 9

	def __init__(self, message, step=None):
		super().__init__(message)
		self.step = step


class StoreIncompatibilityError(CllError):
	exit_code = 10


class CheckpointError(CllError):
	exit_code = 11


class BadMagicError(CheckpointError):
	exit_code = 12


class VersionMismatchError(CheckpointError):
	exit_code = 13


class TruncatedCheckpointError(CheckpointError):
	exit_code = 14

	def __init__(self, message, parameter=None):
		super().__init__(message)
		self.parameter = parameter


class DimMismatchError(CheckpointError):
	exit_code = 15


class ImageFormatError(CllError):
	exit_code = 16


class MissingFileError(CllError):
	exit_code = 17


def exit_code_table():
	"""(code, name) rows for every error kind, used in the --help epilog."""
	seen = {}
	stack = [CllError]
	while stack:
		cls = stack.pop()
		seen.setdefault(cls.exit_code, cls.__name__)
		stack.extend(sorted(cls.__subclasses__(), key=lambda c: c.exit_code, reverse=True))
	return sorted(seen.items())
