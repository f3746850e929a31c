"""Exception hierarchy shared by all bgnlm modules."""


class BGNLMError(Exception):
    """Base class for all package errors."""


class NonFiniteOutput(BGNLMError):
    def __init__(self, row, subfeature):
        self.row = row
        self.subfeature = subfeature
        super().__init__(f"non-finite value at row {row} in sub-feature {subfeature}")


class DepthExceeded(BGNLMError):
    pass


class WidthExceeded(BGNLMError):
    pass


class AlphaFitFailed(BGNLMError):
    pass


class SingularDesign(BGNLMError):
    pass


class NoConvergence(BGNLMError):
    pass


class NonFiniteLikelihood(BGNLMError):
    pass


class EmptyStore(BGNLMError):
    pass


class DegenerateCorrelation(BGNLMError):
    pass


class ScaleGuard(BGNLMError):
    pass


class FeatureEvalFailure(BGNLMError):
    def __init__(self, row, feature):
        self.row = row
        self.feature = feature
        super().__init__(f"feature {feature} could not be evaluated at row {row}")


class DataError(BGNLMError):
    pass


class ParseError(DataError):
    def __init__(self, row, col, value=None):
        self.row = row
        self.col = col
        super().__init__(f"cannot parse value {value!r} at row {row}, column {col!r}")


class UnknownColumn(DataError):
    pass


class EmptyAfterFiltering(DataError):
    pass


class ConfigError(BGNLMError):
    pass
