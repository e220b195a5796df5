"""Exception types raised by mixlab."""


class MixlabError(Exception):
    """Base class for all mixlab errors."""


class ContractViolation(MixlabError, ValueError):
    """An argument breaks the documented precondition of an operation."""


class DomainError(MixlabError, ValueError):
    """A value lies outside the domain where the quantity is defined."""


class DegenerateInputError(MixlabError):
    """The mixture assigns zero density to an observation."""

    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(
            f"mixture density is zero at observation {index} (x={value!r})"
        )


class ComponentDeathError(MixlabError):
    """A component lost all of its responsibility mass during EM."""

    def __init__(self, component, mass):
        self.component = component
        self.mass = mass
        super().__init__(
            f"component {component} died (responsibility mass {mass:.3g})"
        )


class UnderdeterminedError(ContractViolation):
    """Too few observations for the requested number of components."""


class FitFailureError(MixlabError):
    """Every EM restart failed."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = list(diagnostics or [])
        super().__init__(message)
