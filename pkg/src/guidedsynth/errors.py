"""Exception types raised across the package."""


class GuidedSynthError(Exception):
    """Base class for all package errors."""


class DomainError(GuidedSynthError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(GuidedSynthError, ValueError):
    """Array shapes are inconsistent."""


class ConfigError(GuidedSynthError, ValueError):
    """Invalid or unknown configuration."""


class PhoneLookupError(GuidedSynthError, KeyError):
    """A phone symbol is missing from an inventory, dictionary or table."""

    def __init__(self, phone, where="inventory"):
        self.phone = phone
        self.where = where
        super().__init__(f"phone {phone!r} not found in {where}")

    def __str__(self):
        return self.args[0]


class NumericError(GuidedSynthError, ArithmeticError):
    """Non-finite values or divergence during a numeric routine."""


class CheckpointError(GuidedSynthError):
    """A checkpoint or data file could not be read."""
