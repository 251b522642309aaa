"""Exception hierarchy shared by every module."""


class ECRError(Exception):
    """Base class for all errors raised by ecrflow."""


class TransversalityViolation(ECRError):
    """A sampled value of ``Dh_j(x) F_b(x)`` fell below ``f_min``."""

    def __init__(self, b, j, x, value, f_min):
        self.b = tuple(b)
        self.j = int(j)
        self.x = x
        self.value = float(value)
        self.f_min = float(f_min)
        super().__init__(
            f"Dh_{j} . F_{_fmt(b)} = {value:.6g} < f_min = {f_min:.6g} at x = {list(map(float, x))}"
        )


class MissingRegionField(ECRError):
    """A region with nonempty interior has no field attached."""

    def __init__(self, b):
        self.b = tuple(b)
        super().__init__(f"no field supplied for corner {_fmt(b)}")


class NoImpact(ECRError):
    """The target surface was not reached within the search horizon."""

    def __init__(self, horizon, what="surface"):
        self.horizon = float(horizon)
        super().__init__(f"{what} not reached within horizon {horizon:g}")


class MaxEventsExceeded(ECRError):
    def __init__(self, limit):
        self.limit = int(limit)
        super().__init__(f"more than {limit} crossings in one call")


class NonTransverseCrossing(ECRError):
    """Grazing or backwards crossing of an event surface."""

    def __init__(self, j, x, value=None):
        self.j = int(j)
        self.x = x
        self.value = value
        msg = f"non-transverse crossing of surface {j}"
        if value is not None:
            msg += f" (Dh.F = {value:.6g})"
        super().__init__(msg)


class OutOfDomain(ECRError):
    """The trajectory left the region where the model is valid."""


class ZeroVelocityRegion(OutOfDomain):
    """A velocity component of a second-order oscillator reached zero."""


class IntegrationError(ECRError):
    """The underlying Runge-Kutta stepper failed."""


class DivisionNearZero(ECRError):
    def __init__(self, value, f_min):
        self.value = float(value)
        super().__init__(f"denominator {value:.6g} below transversality margin {f_min:.6g}")


class AmbiguousWord(ECRError):
    """A direction lies on a word-cone boundary and the adjacent words disagree."""


class NotTangent(ECRError):
    def __init__(self, j, i, cosine):
        self.pair = (j, i)
        self.cosine = float(cosine)
        super().__init__(f"surfaces {j} and {i} are not tangent (|cos| = {cosine:.12g})")


class NoReturn(ECRError):
    def __init__(self, window):
        self.window = tuple(window)
        super().__init__(f"no return to section in time window ({window[0]:g}, {window[1]:g})")


class NonTransverseSection(ECRError):
    def __init__(self, value):
        self.value = float(value)
        super().__init__(f"flow is not transverse to the section (Dsigma.F = {value:.6g})")


class SectionOnDiscontinuity(ECRError):
    def __init__(self, j, distance):
        self.j = int(j)
        self.distance = float(distance)
        super().__init__(f"section anchor lies within {distance:.3g} of event surface {j}")


class NoContraction(ECRError):
    """A scalar return map does not send its bracketing interval into itself."""


class ConfigError(ECRError):
    pass


class ExperimentError(ECRError):
    pass


def _fmt(b):
    return "".join("+" if s > 0 else "-" for s in b)
