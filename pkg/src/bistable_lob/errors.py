class AnalysisError(ValueError):
    """Base class for inputs an analysis routine cannot work with."""


class DegenerateInput(AnalysisError):
    pass


class SingularDesign(AnalysisError):
    pass


class SeriesTooShort(AnalysisError):
    pass


class NoScalingRegion(AnalysisError):
    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve


class NoMatches(AnalysisError):
    pass


class NoValidNeighbors(AnalysisError):
    pass


class OneClassOnly(AnalysisError):
    pass


class NonFinite(AnalysisError):
    pass


class EmptyInput(AnalysisError):
    pass
