"""Shared exception types."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient.

    `details` carries the loss-term breakdown (stage, step, alpha, tap,
    individual loss values) so callers can persist a divergence report.
    """

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = dict(details or {})
