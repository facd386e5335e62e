"""Exception hierarchy shared across the toolkit."""


class SVIError(Exception):
    """Base class for all toolkit errors."""


class NonSkewInput(SVIError, ValueError):
    pass


class OutOfDomain(SVIError, ValueError):
    pass


class IndexOutOfRange(SVIError, IndexError):
    pass


class InvalidTemperature(SVIError, ValueError):
    pass


class InvalidSystem(SVIError, ValueError):
    """Model parameters or derivative fields failed a construction check."""


class NumericalFailure(SVIError, RuntimeError):
    """Base for failures during time stepping.

    ``seed`` and ``step`` are filled in by drivers that know them.
    """

    def __init__(self, msg, seed=None, step=None):
        super().__init__(msg)
        self.seed = seed
        self.step = step

    def __str__(self):
        msg = super().__str__()
        extra = []
        if self.seed is not None:
            extra.append(f"seed={self.seed}")
        if self.step is not None:
            extra.append(f"step={self.step}")
        return f"{msg} ({', '.join(extra)})" if extra else msg


class NewtonDivergence(NumericalFailure):
    pass


class RankDeficientConstraint(NumericalFailure):
    pass


class Blowup(NumericalFailure):
    pass


class SymmetryNotDeclared(SVIError, ValueError):
    pass


class ConfigParse(SVIError, ValueError):
    pass


class UnknownModel(SVIError, KeyError):
    pass


class UnknownIntegrator(SVIError, KeyError):
    pass
