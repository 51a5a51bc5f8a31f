"""Exception types shared across the package.

The CLI maps these onto process exit codes: bad inputs exit 1, numerical
failures (divergence, infeasible width search) exit 2, I/O problems exit 3.
"""


class ValidationError(ValueError):
    """Arguments or file contents that violate a documented precondition."""


class DivergenceError(RuntimeError):
    """Iterates or losses left the representable range during a solve."""

    def __init__(self, iteration, message=None):
        self.iteration = int(iteration)
        if message is None:
            message = f"solve diverged at iteration {self.iteration}"
        super().__init__(message)


class InfeasibleError(RuntimeError):
    """No parameter value satisfies the requested constraints."""
