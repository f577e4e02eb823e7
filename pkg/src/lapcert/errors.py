"""Exception types raised across the package."""


class LapcertError(Exception):
    """Base class for all package errors."""


class GraphFormatError(LapcertError, ValueError):
    """An edge-list or Matrix-Market source could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GraphError(LapcertError, ValueError):
    """A graph violates a structural invariant."""


class ConvergenceError(LapcertError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{message} (iterations={iterations}, residual={residual})")


class SamplingError(LapcertError, RuntimeError):
    """A sampler could not produce a valid sample."""


class EmptySampleError(SamplingError):
    """The streaming sampler drew zero edges; retry with another seed."""


class EstimationError(LapcertError, RuntimeError):
    """A bootstrap replicate failed; carries the replicate index."""

    def __init__(self, message, replicate=None):
        self.replicate = replicate
        if replicate is not None:
            message = f"replicate {replicate}: {message}"
        super().__init__(message)


class ExperimentError(LapcertError, RuntimeError):
    """A coverage experiment had too many failed trials."""
