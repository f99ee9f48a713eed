"""Exception hierarchy shared across the package.

Every error raised by spekit derives from SpekitError so callers can catch
library failures without swallowing unrelated exceptions.  The CLI maps each
class below to a distinct process exit code (see spekit.cli).
"""


class SpekitError(Exception):
    """Base class for all spekit errors."""


class ValidationError(SpekitError, ValueError):
    """Invalid input values or violated type invariants."""


class AbsorbingStateError(ValidationError):
    """Rate system has an absorbing state, so no unique steady state exists."""


class DegenerateEigenvaluesError(SpekitError):
    """Rate matrix eigenvalues are degenerate or complex; the two-exponential
    parameterization does not apply.  Use g2_exact instead."""


class FitError(SpekitError):
    """A fitting routine could not produce a usable result."""


class SingularJacobianError(FitError):
    """One or more parameters have no effect on the model at the initial
    point; carries the degenerate parameter names."""

    def __init__(self, names):
        self.names = tuple(names)
        super().__init__(
            "singular Jacobian: parameter(s) %s do not affect the model"
            % ", ".join(self.names)
        )


class NoAntibunchingError(FitError):
    """g2 histogram shows no antibunching signature (minimum bin > 0.8)."""


class PeakOverlapError(FitError):
    """Initial peak positions too close to resolve; try fewer peaks."""


class TagFileError(SpekitError):
    """Malformed time-tag file.  Carries the byte offset or line number."""

    def __init__(self, message, *, offset=None, line=None):
        self.offset = offset
        self.line = line
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class PipelineError(SpekitError):
    """A pipeline stage failed; message is prefixed with the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")
