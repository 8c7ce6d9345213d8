"""Exception types shared across the toolkit."""


class SfnnError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(SfnnError):
    """Operands have incompatible shapes."""


class ShapeMismatch(DimensionMismatch):
    """An array does not match the shape a model configuration requires."""


class RankDeficient(SfnnError):
    """A least-squares system has (numerically) linearly dependent columns."""


class NotPositiveDefinite(SfnnError):
    """A matrix required to be positive definite is not."""


class NoConvergence(SfnnError):
    """An iterative solver exceeded its iteration cap."""


class ParseError(SfnnError):
    """A CSV file could not be parsed; carries the offending location."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyFile(ParseError):
    """The CSV file has no data rows."""


class RaggedRows(ParseError):
    """A CSV row has a different number of cells than the header."""


class NonNumericCell(ParseError):
    """A CSV cell could not be parsed as a finite real number."""


class DegenerateSeries(SfnnError):
    """A series has (near-)zero variance over the training segment."""

    def __init__(self, index, name=None):
        self.index = index
        self.name = name
        label = f"series {index}" if name is None else f"series {index} ({name!r})"
        super().__init__(f"{label} has near-zero standard deviation over the training segment")


class TooShort(SfnnError):
    """A segment is too short for the requested windowing or split."""


class SingleSeries(SfnnError):
    """An operation that needs at least two series got one."""


class TraceMismatch(SfnnError):
    """A backward pass was given a trace from a different forward call."""


class NonFiniteLoss(SfnnError):
    """Training produced a NaN or infinite loss."""


class NoTrials(SfnnError):
    """Look-back selection was asked to choose from an empty trial set."""


class MissingCell(SfnnError):
    """Benchmark aggregation requires every model to cover every cell."""


class DegenerateVariance(SfnnError):
    """Both samples in a t-test have zero variance with unequal means."""


class UnknownDataset(SfnnError):
    """No built-in grid exists for the requested dataset name."""

    def __init__(self, name, known):
        self.name = name
        self.known = tuple(known)
        super().__init__(
            f"unknown dataset {name!r}; built-in grids exist for: {', '.join(self.known)}"
        )
