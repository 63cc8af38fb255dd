"""Exception hierarchy.

Data errors (bad input documents, count mismatches) and numerical errors
(degenerate systems) are kept apart so the CLI can map them to exit codes.
"""


class PoseRegError(Exception):
    pass


class DataError(PoseRegError):
    pass


class NumericalError(PoseRegError):
    pass


class SchemaError(DataError):
    pass


class CountMismatch(DataError):
    pass


class IntrinsicsInvalid(DataError):
    pass


class FrustumViolation(DataError):
    pass


class InvalidConfig(DataError):
    pass


class DepthNonPositive(NumericalError):
    pass


class DegenerateSystem(NumericalError):
    pass


class RankDeficientTranslation(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class SingularInformation(NumericalError):
    def __init__(self, msg, null_directions=None):
        super().__init__(msg)
        self.null_directions = null_directions


class ConditioningFailure(NumericalError):
    pass
