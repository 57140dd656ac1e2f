"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class RoutingError(KeyError):
    """An adapter was asked for a language it does not hold."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class PlanError(ValueError):
    """Pruning plan is malformed (e.g. overlapping groups)."""


class DegenerateInputError(ValueError):
    """Statistic undefined for the given input (e.g. zero variance)."""


class MissingPrerequisiteError(RuntimeError):
    """A phase was started before the artefact it depends on exists."""
