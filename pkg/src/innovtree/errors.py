"""Exception hierarchy shared by all innovtree modules."""


class InnovtreeError(Exception):
    """Base class for every error raised by this package."""


class ModelError(InnovtreeError):
    """Invalid trait catalog, scaling regime or configuration."""


class SingularModelError(ModelError):
    """A trait has zero intra-trait competition, so its equilibrium is undefined."""


class OrderViolationError(ModelError):
    """The catalog cannot be chained into one strictly increasing fitness ladder."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class DegenerateKernelError(ModelError):
    """The 2x2 competition matrix is singular and admits a continuum of fixed points."""


class NotAFixedPointError(ModelError):
    pass


class PreconditionError(InnovtreeError):
    pass


class SimulationError(InnovtreeError):
    """Runtime failure while simulating a stochastic path."""


class ExplosionError(SimulationError):
    pass


class AbsorbingStateError(SimulationError):
    """Total event rate is zero: nothing can ever happen again."""


class StiffnessError(SimulationError):
    pass


class ReplicateError(SimulationError):
    def __init__(self, replicate, cause):
        super().__init__(f"replicate {replicate} failed: {cause}")
        self.replicate = replicate
        self.cause = cause


class GridMismatchError(InnovtreeError):
    pass


class ScenarioError(InnovtreeError):
    """Malformed or inconsistent scenario file."""

    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column
