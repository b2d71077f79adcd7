"""Exception hierarchy shared by every stage of the pipeline."""


class EqBoundError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(EqBoundError):
    exit_code = 2


class MeshError(EqBoundError):
    exit_code = 3


class MshParseError(MeshError):
    pass


class UnsupportedElementError(MeshError):
    pass


class DegenerateElementError(MeshError):
    pass


class TopologyError(MeshError):
    pass


class NestingError(MeshError):
    pass


class InfeasibleConstraintsError(EqBoundError):
    """Redundant constraint rows disagree on their right-hand side."""

    exit_code = 4


class IncompatibleDataError(InfeasibleConstraintsError):
    """Local Neumann data is not self-equilibrated."""


class RankDeficiencyError(EqBoundError):
    exit_code = 5


class NotSPDError(RankDeficiencyError):
    pass


class RigidModeError(RankDeficiencyError):
    """Global stiffness is singular: Dirichlet data leaves rigid modes free."""


class EstimatorError(EqBoundError):
    exit_code = 6
