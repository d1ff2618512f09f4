"""Exception types raised across the package."""


class OverlapError(ValueError):
    """A propensity needed by an importance weight is zero (or the weight is not finite)."""


class NoAnalyticValueError(ValueError):
    """The environment/policy pair has no closed-form policy value."""


class InfeasibleFloorError(ValueError):
    """K * floor > 1, so no probability vector can satisfy the floor."""


class DatasetError(ValueError):
    """A classification CSV could not be turned into a bandit environment."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
