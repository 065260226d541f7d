"""Exception hierarchy.  Every error carries a short machine ``code``."""


class GradflowError(Exception):
    code = "error"
    exit_status = 2


class ConfigError(GradflowError, ValueError):
    code = "config"
    exit_status = 1

    def __init__(self, msg, code=None):
        if code is not None:
            self.code = code
        super().__init__(msg)


class MeshFormatError(GradflowError, ValueError):
    code = "mesh_format"
    exit_status = 1

    def __init__(self, msg, line=None):
        self.line = line
        if line is not None:
            msg = f"{msg}, line {line}"
        super().__init__(msg)


class TrajectoryFormatError(MeshFormatError):
    code = "trajectory_format"


class NegativeDensity(GradflowError, ArithmeticError):
    code = "negative_density"

    def __init__(self, msg, step=None, time=None):
        self.step = step
        self.time = time
        super().__init__(msg)


class NonConvergence(GradflowError, ArithmeticError):
    code = "non_convergence"


class DegenerateState(GradflowError, ValueError):
    code = "degenerate_state"


class NonNested(GradflowError, ValueError):
    code = "non_nested"
    exit_status = 1


class StudyFailed(GradflowError):
    """A convergence study ran but missed its thresholds."""
    code = "study_failed"


class Unavailable(GradflowError):
    """A quantity cannot be computed for the given input (tagged, not fatal)."""
    code = "unavailable"
