"""Exception types shared across the package."""


class RmtuneError(Exception):
    """Base class; `module` names the subsystem that raised it."""

    module = "rmtune"


class ConfigurationError(RmtuneError):
    module = "corpus"


class CorpusFormatError(RmtuneError):
    """Malformed corpus/embedding/checkpoint file contents."""

    module = "corpus"


class InvariantError(RmtuneError):
    """A loaded or constructed object violates a documented invariant."""

    module = "corpus"


class ShapeError(RmtuneError):
    module = "encoder"


class InputError(RmtuneError):
    module = "heads"


class CheckpointError(RmtuneError):
    """Malformed or inconsistent model checkpoint file."""

    module = "heads"


class DivergenceError(RmtuneError):
    module = "heads"


class DegenerateDataError(RmtuneError):
    module = "scoremodel"


class InsufficientDataError(RmtuneError):
    module = "scoremodel"


class AmbiguousRankError(RmtuneError):
    module = "scoremodel"


class ParameterError(RmtuneError):
    module = "risk"


class TuneError(RmtuneError):
    """Bad tuning configuration, inconsistent dimensions, or a malformed
    trace file."""

    module = "tuner"


class EvaluationError(RmtuneError):
    module = "eval"


class CliError(RmtuneError):
    """Bad command-line usage or a broken manifest."""

    module = "cli"
