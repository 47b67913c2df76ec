"""Exception hierarchy shared by all modules."""


class PBGCavityError(Exception):
    """Base class for every error raised by the package."""


class InvalidParameters(PBGCavityError, ValueError):
    pass


class NonPositiveCoupling(InvalidParameters):
    pass


class NonPositiveCavityFrequency(InvalidParameters):
    pass


class NegativeTemperature(InvalidParameters):
    pass


class NonPositiveFrequency(PBGCavityError, ValueError):
    pass


class NonPositiveDelay(PBGCavityError, ValueError):
    pass


class NumericalError(PBGCavityError, ArithmeticError):
    """Raised when a numerical routine cannot meet its accuracy contract."""


class ToleranceNotMet(NumericalError):
    pass


class StepTooLarge(NumericalError, ValueError):
    pass


class GridMismatch(PBGCavityError, ValueError):
    pass


class TruncationTooSmall(NumericalError):
    def __init__(self, message, tail_bound=None):
        super().__init__(message)
        self.tail_bound = tail_bound


class ZeroFluctuation(PBGCavityError, ValueError):
    pass


class MaskGap(NumericalError):
    """The coefficient mask interrupts the oracle integration.

    ``valid_intervals`` lists the ``(t_start, t_end)`` windows where the
    coefficients are usable; ``partial`` holds the series integrated up to
    the first gap.
    """

    def __init__(self, message, valid_intervals, partial=None):
        super().__init__(message)
        self.valid_intervals = valid_intervals
        self.partial = partial
