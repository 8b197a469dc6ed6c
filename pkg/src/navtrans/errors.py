"""Exception types shared across the package."""


class NavError(Exception):
    """Base class for all navtrans errors."""


class NoSuchEdge(NavError):
    """No triplet (node, behavior, ...) exists in the graph."""


class UnknownNode(NavError):
    """A node tag does not belong to the graph."""


class InvalidPlan(NavError):
    """A plan step could not be executed.

    Attributes:
        step: 1-based index of the failing behavior.
        prefix: node sequence visited before the failure.
    """

    def __init__(self, step, prefix, message=None):
        self.step = step
        self.prefix = list(prefix)
        super().__init__(message or f"plan invalid at step {step}")


class Unreachable(NavError):
    """No path exists between the requested nodes."""


class SpecInfeasible(NavError):
    """World or dataset constraints could not be satisfied."""


class ParseError(NavError):
    """A file, line, or token could not be parsed."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        prefix = str(source) if source is not None else ""
        if line is not None:
            prefix += f":{line}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingGraph(NavError):
    """A sample references a graph id that is not available."""


class ShapeMismatch(NavError):
    """Array shapes are inconsistent with the requested operation."""


class AllMasked(NavError):
    """Every softmax entry carries the mask sentinel."""


class InvalidRate(NavError):
    """A dropout rate lies outside [0, 1)."""


class EmptyInstruction(NavError):
    """An instruction normalized to zero tokens."""


class EmptyGraph(NavError):
    """A graph has no triplets to encode."""


class VariantMismatch(NavError):
    """An operation was called on a model variant that does not support it."""


class EmptyDataset(NavError):
    """Training requires at least one sample."""
