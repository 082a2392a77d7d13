"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration or distribution specification."""


class DomainError(ValueError):
    """Argument outside the domain where a quantity is defined (e.g. t >= 1)."""


class NumericalError(RuntimeError):
    """Numerical failure that aborts a computation.

    Carries enough context (module, operation, parameters) for the CLI to
    emit an attributable diagnostic.
    """

    def __init__(self, message, module="", operation="", params=None):
        super().__init__(message)
        self.module = module
        self.operation = operation
        self.params = dict(params or {})

    def diagnostic(self):
        return {
            "error": str(self),
            "module": self.module,
            "operation": self.operation,
            "params": self.params,
        }
