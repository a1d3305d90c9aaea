class UsageError(ValueError):
    """Bad arguments: wrong dimensions, invalid parameters, infeasible inputs."""


class CertificationError(RuntimeError):
    """No certificate could be found on the requested decay-rate grid."""

    def __init__(self, message, best_margin=None, best_eta=None):
        super().__init__(message)
        self.best_margin = best_margin
        self.best_eta = best_eta


class HorizonError(UsageError):
    """A contraction condition that no finite horizon can satisfy."""


class PlantConstraintError(RuntimeError):
    """The simulated plant left its state constraint set."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state
