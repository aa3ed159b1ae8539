"""Exception hierarchy shared by the fpplab modules."""


class FPPError(Exception):
    """Base class for all fpplab errors."""


class ConfigError(FPPError, ValueError):
    """Invalid parameters, reported before any computation starts."""


class DomainError(FPPError, ValueError):
    """A query outside the domain of an object (vertex not in region, non-adjacent edge...)."""


class EnvironmentFileError(FPPError):
    """Corrupted, truncated or version-mismatched environment file."""


class TieError(FPPError):
    """Exact tie among weights or passage times under a continuous weight law."""


class InfeasibleGeometry(FPPError):
    """Point placement impossible for the given functionals and slopes."""


class WitnessError(FPPError, AssertionError):
    """A module-level invariant failed on a concrete configuration."""


class ReplicaAssertionError(FPPError):
    """A replica violated an invariant; carries the replica seed for replay."""

    def __init__(self, message, *, index, seed):
        super().__init__(f"{message} (replica {index}, seed {seed})")
        self.message = message
        self.index = index
        self.seed = seed

    def __reduce__(self):
        return (_rebuild_replica_error, (self.message, self.index, self.seed))


def _rebuild_replica_error(message, index, seed):
    return ReplicaAssertionError(message, index=index, seed=seed)
