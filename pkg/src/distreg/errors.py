"""Exception hierarchy shared by the library and the CLI."""


class DistRegError(Exception):
    """Base class for all errors raised by distreg."""


class InputError(DistRegError, ValueError):
    """Malformed arguments: dimension mismatch, nonpositive scales, empty inputs."""


class GeometryError(DistRegError, ValueError):
    """Inner products that do not form a valid Gram block."""


class ConfigError(DistRegError, ValueError):
    """Invalid experiment configuration or schedule request."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(DistRegError, RuntimeError):
    """Iterates blew up; carries the offending step size."""

    def __init__(self, eta: float, iteration: int, kappa_sq: float | None = None):
        self.eta = eta
        self.iteration = iteration
        msg = f"iterates diverged at t={iteration} with step size eta={eta:g}"
        if kappa_sq is not None:
            msg += f"; use eta < 1/(4 kappa^2) = {1.0 / (4.0 * kappa_sq):g}"
        super().__init__(msg)


class ConditioningError(DistRegError, RuntimeError):
    """Cholesky factorisation of a regularised Gram failed."""


class DegenerateError(DistRegError, ValueError):
    """No usable data left after filtering (e.g. every pair coincides)."""
