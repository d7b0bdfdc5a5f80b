"""Exception types raised across the package."""


class BipMixedError(Exception):
    """Base class for all package errors."""


class EmptyInput(BipMixedError, ValueError):
    pass


class CrossSiteFamily(BipMixedError, ValueError):
    """A family label occurs under more than one site label."""

    def __init__(self, family, sites):
        self.family = family
        self.sites = sorted(map(str, sites))
        super().__init__(f"family {family!r} appears in sites {self.sites}")


class ConstantColumn(BipMixedError, ValueError):
    """A feature column has zero sample standard deviation."""

    def __init__(self, view, column):
        self.view = view
        self.column = column
        super().__init__(f"column {column} of view {view} is constant")


class DimensionMismatch(BipMixedError, ValueError):
    pass


class SingularSystem(BipMixedError, ArithmeticError):
    pass


class UnknownSite(BipMixedError, KeyError):
    def __init__(self, sites):
        self.sites = list(sites)
        super().__init__(f"sites not seen in training: {self.sites}")

    def __str__(self):
        return self.args[0]


class BadDimension(BipMixedError, ValueError):
    pass


class LengthMismatch(BipMixedError, ValueError):
    pass


class UndefinedRate(BipMixedError, ValueError):
    """A selection rate needs at least one positive and one negative."""


class EmptyModel(BipMixedError, ValueError):
    pass


class ConfigError(BipMixedError, ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
