"""Exception hierarchy shared by all modules."""


class EvansLabError(Exception):
    """Base class for numerical failures reported by the lab."""


class NonDiagonalizableSpeeds(EvansLabError):
    """df(u+) has (numerically) repeated or complex eigenvalues."""


class NoConnection(EvansLabError):
    """No trajectory on the stable manifold of u+ reaches u0."""


class BlowUp(EvansLabError):
    """A profile trajectory left the working domain."""


class TailTooShort(EvansLabError):
    pass


class SingularViscosity(EvansLabError):
    pass


class SplittingFailure(EvansLabError):
    """The limiting matrix has no well-separated group of n decaying modes."""


class StiffnessFailure(EvansLabError):
    pass


class ZeroOnContour(EvansLabError):
    pass


class IllConditionedFrame(EvansLabError):
    pass


class NearPole(EvansLabError):
    """lambda is (numerically) an Evans zero; kernel entries unreliable."""


class BoundViolated(EvansLabError):
    pass


class TruncationFailure(EvansLabError):
    pass


class CFLViolation(EvansLabError):
    pass


class PerturbationBlowup(EvansLabError):
    pass


class InsufficientDecade(EvansLabError):
    pass
