"""Exception types shared across the package."""


class DecaylabError(Exception):
    """Base class for all decaylab errors."""


class ValidationError(DecaylabError, ValueError):
    """A spec object failed its structural validation."""


class DomainError(DecaylabError, ValueError):
    """A quantity was requested outside the domain where it is defined/computable."""


class IntegrationError(DecaylabError, RuntimeError):
    """An integrator failed to produce a usable result."""


class ConfigError(DecaylabError, ValueError):
    """A scenario configuration file is malformed or inconsistent."""
