"""Exception hierarchy shared by all hetfuse modules."""


class HetfuseError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(HetfuseError, ValueError):
    pass


class DegenerateRestrictionError(HetfuseError, ValueError):
    pass


class CoverageError(HetfuseError, ValueError):
    """Raised when some class of the universe is predicted by no classifier."""

    def __init__(self, uncovered):
        self.uncovered = list(uncovered)
        super().__init__("classes not covered by any classifier: " + ", ".join(self.uncovered))


class SizingError(HetfuseError, ValueError):
    pass


class UnsupportedSizeError(HetfuseError, ValueError):
    pass
