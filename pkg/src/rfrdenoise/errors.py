"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """An operand's dimensions do not match what the operation expects."""

    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what}: expected {self.expected}, got {self.actual}")


class NumericsError(ArithmeticError):
    """A non-finite value appeared where the computation requires finite data.

    ``context`` carries structured positions (step/iteration/frame indices)
    so drivers can report exactly where a run diverged.
    """

    def __init__(self, message: str, **context):
        self.context = dict(context)
        detail = ", ".join(f"{k}={v}" for k, v in self.context.items())
        super().__init__(f"{message} ({detail})" if detail else message)


class PnmFormatError(ValueError):
    """A PGM/PPM stream is malformed. ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class InputError(ValueError):
    """A CLI-level input problem: missing files, bad manifest, refused overwrite."""
