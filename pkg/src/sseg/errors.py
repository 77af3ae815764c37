"""Exception types shared across the toolkit."""


class SsegError(Exception):
    """Base class for all errors raised by this package."""


class EmptyPointSet(SsegError):
    """An operation that needs at least one point received none."""


class EmptyShape(SsegError):
    """A shape-level operation received no segments."""


class UnknownLabel(SsegError):
    """A semantic label is not present in the taxonomy."""


class MissingGeometry(SsegError):
    """A node that must carry a bounding box does not have one."""


class InvalidCost(SsegError):
    """A cost matrix contains NaN entries."""


class InvalidSegmentation(SsegError):
    """A segmentation references point indices outside the cloud."""


class DuplicateSource(SsegError):
    """Two merge decisions share the same source leaf."""


class UnknownNode(SsegError):
    """A merge decision references a node id that does not exist."""


class InvalidProbability(SsegError):
    """A probability score lies outside [0, 1]."""


class ParseError(SsegError):
    """A file does not match its documented schema."""


class NumericError(SsegError):
    """A numeric failure (NaN/Inf) occurred during optimization."""
