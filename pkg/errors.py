"""Exception types shared by the sampling lab modules"""


class LabError(Exception):
    """Base class for every error raised by this package"""


class DomainError(LabError, ValueError):
    """An argument lies outside the domain of the operation"""


class PreconditionError(DomainError):
    """A step was called without the state it needs (e.g. multistep history)"""


class InfeasibleError(DomainError):
    """No schedule exists for the requested budget"""


class StepError(LabError):
    """A sampler step failed; carries the index of the step"""

    def __init__(self, step_index, cause):
        self.step_index = step_index
        self.cause = cause
        super().__init__(f"step {step_index} failed: {cause}")


class DataIOError(LabError):
    """A dataset, trajectory or report file could not be read or written"""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")
