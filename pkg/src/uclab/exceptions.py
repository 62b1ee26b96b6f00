"""Exception hierarchy shared by every module.

Each family carries the process exit code used by the command line runner.
"""


class UCLabError(Exception):
    exit_code = 1


class ValidationError(UCLabError, ValueError):
    """A precondition of an operation is violated by its inputs."""

    exit_code = 2


class DisconnectedDomainError(ValidationError):
    def __init__(self, message, component_sizes=()):
        super().__init__(message)
        self.component_sizes = tuple(component_sizes)


class BallEscapesDomainError(ValidationError):
    pass


class ZeroBallError(ValidationError):
    pass


class ChainInfeasibleError(ValidationError):
    pass


class MassNearBoundaryError(ValidationError):
    def __init__(self, message, interior_mass=None):
        super().__init__(message)
        self.interior_mass = interior_mass


class SigmaDegenerateError(ValidationError):
    pass


class ConvergenceError(UCLabError, RuntimeError):
    exit_code = 3

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class CertificateViolation(UCLabError):
    exit_code = 4
