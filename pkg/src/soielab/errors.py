"""Exception hierarchy shared by the library and the command line."""


class SoieError(Exception):
    """Base class for every error raised by soielab."""


class DomainError(SoieError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigurationError(SoieError, ValueError):
    """Invalid or inconsistent configuration."""


class ContractViolation(SoieError, ValueError):
    """Inputs break a documented precondition (shapes, missing keys, ...)."""


class NumericalError(SoieError, ArithmeticError):
    """Base class for numerical failures (CLI exit code 4)."""


class DivergedTrialError(NumericalError):
    def __init__(self, step, trial_index=None, seed=None):
        self.step = step
        self.trial_index = trial_index
        self.seed = seed
        msg = f"state norm exceeded bound at step {step}"
        if trial_index is not None:
            msg += f" (trial {trial_index}, seed {seed})"
        super().__init__(msg)


class NumericalInstabilityError(NumericalError):
    """Covariance lost positive semi-definiteness; try a smaller dt."""


class NoSteadyStateError(NumericalError):
    """The closed-loop matrix is not Hurwitz."""


class FlatLandscapeWarning(UserWarning):
    """Cost differences across the search grid are below resolution."""


class MissingPrerequisiteError(SoieError):
    """A required upstream artefact (e.g. the impedance surface) is absent."""
