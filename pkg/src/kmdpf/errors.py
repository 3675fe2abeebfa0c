"""Exception and warning types raised by the kmdpf package."""


class KmdpfError(Exception):
    """Base class for all kmdpf errors."""


class DimensionMismatch(KmdpfError, ValueError):
    pass


class DegenerateSpectrum(KmdpfError):
    """Two eigenvalues coincide, so the eigenvector basis is not unique."""


class ZeroRealEigenvector(KmdpfError):
    """A left eigenvector has (numerically) no real part."""


class MissingIdentity(KmdpfError, ValueError):
    def __init__(self, state):
        super().__init__(f"dictionary has no identity observable for state x{state}")
        self.state = state


class DuplicateName(KmdpfError, ValueError):
    pass


class InvalidObservable(KmdpfError, ValueError):
    pass


class NonFiniteValue(KmdpfError, ArithmeticError):
    pass


class NonFiniteState(NonFiniteValue):
    """Integration produced NaN or Inf (blow-up)."""


class TooFewSnapshots(KmdpfError, ValueError):
    pass


class ZeroReference(KmdpfError, ZeroDivisionError):
    pass


class ZeroRow(KmdpfError, ZeroDivisionError):
    pass


class InvalidTopology(KmdpfError, ValueError):
    pass


class InvalidDistribution(KmdpfError, ValueError):
    pass


class RankDeficientWarning(UserWarning):
    pass


class ImaginaryResidueWarning(UserWarning):
    pass


class NonConvergentWarning(UserWarning):
    pass
