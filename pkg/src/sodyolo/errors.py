"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class UnsupportedConfigurationError(ValueError):
    """A configuration the implementation deliberately does not support."""


class AnnotationParseError(ValueError):
    """An annotation file line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. no ground truth at all)."""


class GradCheckError(RuntimeError):
    """A non-finite value surfaced while checking gradients."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, components: dict):
        super().__init__(f"non-finite loss at step {step}: {components}")
        self.step = step
        self.components = components
