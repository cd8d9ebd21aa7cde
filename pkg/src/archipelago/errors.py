"""Exception hierarchy shared by all modules."""


class ArchipelagoError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ArchipelagoError, ValueError):
    """An argument lies outside the domain of an operation."""


class EvaluationError(ArchipelagoError, ValueError):
    """A user-supplied function returned a non-finite or invalid value."""


class ConfigurationError(ArchipelagoError, ValueError):
    """An experiment or model description cannot be used as given."""


class DegeneracyError(ArchipelagoError, RuntimeError):
    """All particle weights of an island vanished.

    Attributes
    ----------
    island : int or None
        Index of the offending island.
    step : int or None
        Algorithm step at which the degeneracy occurred, when known.
    seed : int or None
        Master seed of the run, when known.
    """

    def __init__(self, message, island=None, step=None, seed=None):
        self.island = island
        self.step = step
        self.seed = seed
        self.base_message = message
        super().__init__(self._format())

    def _format(self):
        parts = [self.base_message]
        if self.island is not None:
            parts.append(f"island={self.island}")
        if self.step is not None:
            parts.append(f"step={self.step}")
        if self.seed is not None:
            parts.append(f"seed={self.seed}")
        return " ".join(parts)

    def stamped(self, step=None, seed=None):
        """Return a copy carrying the given step and/or seed."""
        return DegeneracyError(
            self.base_message,
            island=self.island,
            step=self.step if step is None else step,
            seed=self.seed if seed is None else seed,
        )
