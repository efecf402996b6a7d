"""Exception types shared across the package.

The CLI maps these onto exit codes: input problems exit 2, detected
instability exits 3, internal consistency failures exit 4.
"""


class LtsWaveError(Exception):
    exit_code = 4


class InputError(LtsWaveError):
    """Invalid argument, configuration or precondition violation."""

    exit_code = 2


class SchemeMismatchError(InputError):
    """A scheme was asked to integrate a system it does not support."""


class UnsupportedFeatureError(InputError):
    """Requested combination is deliberately out of scope."""


class SizeError(InputError):
    """Problem size exceeds a configured cap."""


class StateError(InputError):
    """Integrator state is missing required history."""


class DegenerateSystemError(InputError):
    """System has no meaningful CFL reference (e.g. zero stiffness)."""


class AssemblyError(InputError):
    """Discretization could not be built (e.g. non-positive mass)."""


class InstabilityError(LtsWaveError):
    """A time integration blew up beyond the growth threshold."""

    exit_code = 3


class BracketError(LtsWaveError):
    """No stable time-step found inside the search bracket."""

    exit_code = 3


class InternalConsistencyError(LtsWaveError):
    """An internal invariant failed (e.g. symmetry beyond tolerance)."""

    exit_code = 4


class SingularBlockError(InternalConsistencyError):
    """A blockwise solve hit a singular block."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConvergenceError(InternalConsistencyError):
    """An iteration failed to converge; carries the best estimate."""

    def __init__(self, message, estimate=None, iterations=None):
        super().__init__(message)
        self.estimate = estimate
        self.iterations = iterations
