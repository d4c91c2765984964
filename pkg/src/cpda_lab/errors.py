"""Exception hierarchy shared by every cpda_lab module."""


class CpdaLabError(Exception):
    """Base class for all simulator errors."""


class InvalidConfig(CpdaLabError):
    pass


class GenerationExhausted(CpdaLabError):
    pass


class NotAdjacent(CpdaLabError):
    pass


class InvalidParams(CpdaLabError):
    pass


class NoCoverage(CpdaLabError):
    pass


class RangeExhausted(CpdaLabError):
    pass


class DuplicateSeeds(CpdaLabError):
    pass


class MagnitudeOverflow(CpdaLabError):
    """An exact value left the supported +/- 2**120 range."""


class SingularMatrix(CpdaLabError):
    pass


class NonIntegerSolution(CpdaLabError):
    """The recovered sum is not an integer, so the inputs were corrupted."""


class PreconditionViolated(CpdaLabError):
    pass


class NoPairwiseKey(CpdaLabError):
    def __init__(self, pair):
        super().__init__(f"no pairwise key for nodes {pair[0]} and {pair[1]}")
        self.pair = pair


class AbortedAfterRetries(CpdaLabError):
    pass


class InconsistentExtraction(CpdaLabError):
    pass


class InvalidScenario(CpdaLabError):
    pass


class LeaderUnreachable(CpdaLabError):
    pass


class ConfigError(CpdaLabError):
    pass
