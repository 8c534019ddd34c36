"""Exception types raised across the package."""


class SirlabError(Exception):
    """Base class for all package errors."""


class InvalidInput(SirlabError, ValueError):
    pass


class SingularCovariance(SirlabError):
    pass


class DegenerateDirection(SirlabError):
    pass


class Degenerate(SirlabError):
    pass


class EnumerationTooLarge(SirlabError):
    def __init__(self, n_subsets, cap):
        self.n_subsets = n_subsets
        self.cap = cap
        super().__init__(f"C(p, s) = {n_subsets} subsets exceeds enumeration cap {cap}")


class FactorizationFailed(SirlabError):
    pass


class ThetaTooLarge(SirlabError, ValueError):
    pass


class HypothesisViolated(SirlabError):
    pass


class PreconditionViolated(SirlabError):
    pass


class ResourceLimit(SirlabError):
    pass
