"""Shared exception types."""


class ParameterError(ValueError):
    """An argument violates a documented precondition; message names the field."""
