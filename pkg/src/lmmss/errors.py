class LmmssError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(LmmssError, ValueError):
    pass


class DomainError(LmmssError, ValueError):
    """An argument lies outside the domain of the operation (e.g. lambda <= 0)."""


class CompletenessError(LmmssError, ArithmeticError):
    """``N(J) and N(L)`` intersect non-trivially, so the LM system is singular."""


class SingularPairError(CompletenessError):
    pass


class ConfigError(LmmssError, ValueError):
    pass
