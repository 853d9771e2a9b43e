"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line layer can map failures
onto 2 (usage/config), 3 (data) and 4 (numerical) without a lookup table.
"""


class DeepRiskError(Exception):
    exit_code = 1


class ConfigError(DeepRiskError, ValueError):
    exit_code = 2


class DataError(DeepRiskError, ValueError):
    exit_code = 3


class NumericalError(DeepRiskError, ArithmeticError):
    exit_code = 4


# config / usage
class SpecOutOfRange(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


# data
class MissingColumn(DataError):
    pass


class UnparseableRow(DataError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class EmptyPanel(DataError):
    pass


class NoValidStocks(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class MissingHorizon(DataError):
    pass


class NoOverlap(DataError):
    pass


class EmptyIndustry(DataError):
    pass


class EmptyNeighborhood(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# numerical
class ZeroVariance(NumericalError):
    pass


class ZeroReturns(NumericalError):
    pass


class SingularNormalEquations(NumericalError):
    pass


class SingularGram(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class DivergedLoss(NumericalError):
    pass


class ZeroPredictedVol(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass
