"""Exception types shared across the package."""


class XtrapError(Exception):
    """Base class for all library errors."""


class GraphInvariantError(XtrapError):
    """A graph violates a structural invariant (bad index, self-loop, dup edge, shape)."""


class IndexOutOfRange(GraphInvariantError):
    pass


class IntraComponentBridge(XtrapError):
    """A bridge joins two nodes of the same component."""


class EmptySubgraph(XtrapError):
    """Induced subgraph with an all-false node mask."""


class ParseError(XtrapError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(msg if line is None else f"line {line}: {msg}")


class SchemaError(XtrapError):
    """A dataset record is well-formed JSON but violates the schema or an invariant."""

    def __init__(self, msg, field=None, line=None):
        self.field = field
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + msg)


class ConfigError(XtrapError):
    pass


class ShapeMismatch(XtrapError):
    pass


class NonDistributionTarget(XtrapError):
    """Cross-entropy target does not sum to one or has negative entries."""


class UnrecordedForward(XtrapError):
    """backward() called on a value that carries no recorded computation."""


class SameComponentPair(XtrapError):
    """Bridge decoding requested for two nodes of the same component."""


class InfeasibleBridgeCount(XtrapError):
    """Requested more bridges than there are cross-component pairs."""


class NoPartitionAvailable(XtrapError):
    """Bridge pretraining has neither generator meta nor an extractor to split graphs."""


class NoValidPairs(XtrapError):
    """Pair-based training found no (label, environment) pair satisfying its constraint."""


class NoCausalComponent(XtrapError):
    """Label assignment over components none of which is causal."""


class MissingCheckpoint(XtrapError):
    pass


class LabelMismatch(XtrapError):
    pass


class SameEnvironment(XtrapError):
    pass


class DegenerateGroups(XtrapError):
    """A label or environment group is too small to estimate a variance."""


class EvalError(XtrapError):
    pass


class IoError(XtrapError):
    pass
