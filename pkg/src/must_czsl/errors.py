"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 2 for anything the user
can fix by editing inputs (config, files, labels), 1 for runtime/numerical
failures.
"""


class MustError(Exception):
    exit_code = 1


class ConfigError(MustError, ValueError):
    exit_code = 2


class FormatError(MustError, ValueError):
    exit_code = 2


class CompatError(MustError):
    exit_code = 2


class DuplicatePair(ConfigError):
    pass


class UnknownComponent(ConfigError, KeyError):
    def __str__(self):
        # KeyError quotes its message; keep plain text.
        return Exception.__str__(self)


class SplitOverlap(ConfigError):
    pass


class SplitViolation(ConfigError):
    pass


class MissingEmbedding(ConfigError):
    pass


class ShapeError(MustError, ValueError):
    pass


class DegenerateVector(MustError, ArithmeticError):
    pass


class NumericalError(MustError, ArithmeticError):
    pass


class ProtocolError(MustError, ValueError):
    pass
