"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when caller-supplied data violates a precondition."""


class NumericalFailure(RuntimeError):
    """A numerical step produced unusable output.

    Carries enough context to locate the failure in a long run.
    """

    def __init__(self, message, *, module=None, operation=None, iteration=None,
                 time_index=None, path=None):
        self.module = module
        self.operation = operation
        self.iteration = iteration
        self.time_index = time_index
        self.path = path
        where = []
        for label, value in (("module", module), ("operation", operation),
                             ("iteration", iteration), ("time_index", time_index),
                             ("path", path)):
            if value is not None:
                where.append(f"{label}={value}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)
