"""Exception hierarchy shared across the package."""


class RicciKGEError(Exception):
    """Base class for all package errors."""


# --- kg-store ---------------------------------------------------------------

class MalformedLine(RicciKGEError):
    def __init__(self, line_number, text=""):
        self.line_number = line_number
        super().__init__(f"line {line_number}: expected 3 tab-separated fields, got {text!r}")


class UnknownName(RicciKGEError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown entity or relation name {name!r}")


class IndexOutOfRange(RicciKGEError):
    pass


class DegenerateGraph(RicciKGEError):
    pass


class CorruptCache(RicciKGEError):
    pass


# --- model-zoo --------------------------------------------------------------

class DimensionMismatch(RicciKGEError):
    pass


class NonFiniteInput(RicciKGEError):
    pass


class DegenerateGradient(RicciKGEError):
    """Raised where a gradient direction is undefined; the edge must be skipped."""


class NonFiniteGradient(RicciKGEError):
    pass


# --- curvature --------------------------------------------------------------

class IsolatedEntity(RicciKGEError):
    def __init__(self, entity):
        self.entity = entity
        super().__init__(f"entity {entity} has no incident triples")


class SupportTooLarge(RicciKGEError):
    pass


class NoConvergence(RicciKGEError):
    def __init__(self, iterations, value=None):
        self.iterations = iterations
        self.value = value
        super().__init__(f"Sinkhorn did not converge after {iterations} iterations")


class DegenerateDistance(RicciKGEError):
    pass


class NonFiniteEmbedding(RicciKGEError):
    pass


# --- flow / trainer ---------------------------------------------------------

class NonFiniteEdge(RicciKGEError):
    pass


class NonFiniteState(RicciKGEError):
    pass


class AllWeightsZero(RicciKGEError):
    pass


class NonFiniteLoss(RicciKGEError):
    pass


class VersionMismatch(RicciKGEError):
    pass


class CorruptCheckpoint(RicciKGEError):
    pass


# --- metrics / diagnostics --------------------------------------------------

class EmptySplit(RicciKGEError):
    pass


class TooFewEdges(RicciKGEError):
    pass


class NumericalUnderflow(RicciKGEError):
    pass
