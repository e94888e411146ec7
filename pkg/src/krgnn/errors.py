"""Exception hierarchy shared by every module.

Each class carries a ``category`` string that the CLI prints in front of
runtime failures.
"""


class KRGNNError(Exception):
    category = "error"


class InvalidArgumentError(KRGNNError, ValueError):
    category = "invalid-argument"


class DegenerateInputError(KRGNNError, ValueError):
    category = "degenerate-input"


class SingularSystemError(KRGNNError, ArithmeticError):
    category = "singular-system"


class ParseError(KRGNNError, ValueError):
    """Malformed input file. ``line`` is 1-based, or ``None`` for whole-file problems."""

    category = "parse-error"

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DivergedError(KRGNNError, ArithmeticError):
    category = "diverged"
