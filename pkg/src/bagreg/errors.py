"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 2 (argparse),
DataFormatError exits 3, NumericalError exits 4.
"""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class DataFormatError(Exception):
    """A dataset / model / manifest file is malformed or inconsistent."""


class NumericalError(RuntimeError):
    """A numerical routine failed beyond its recovery policy."""
