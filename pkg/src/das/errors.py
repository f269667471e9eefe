"""Exception hierarchy shared by every das module.

Every error raised on purpose derives from :class:`DasError` so callers
(and the CLI) can distinguish contract violations from genuine bugs.
"""


class DasError(Exception):
    """Base class for all errors raised by this package."""


# --- dump / manifest ingestion ------------------------------------------------

class MalformedManifest(DasError):
    """Manifest violates its schema or internal consistency rules."""


class MissingFile(DasError):
    """A file referenced by the manifest does not exist."""


class InconsistentDims(DasError):
    """A feature vector's length disagrees with the manifest's feature_dim."""


class MalformedRecord(DasError):
    """A dump line is not a valid record."""


class ProbabilityViolation(DasError):
    """Probability vector with a negative entry or sum too far from 1."""


class BoxViolation(DasError):
    """Bounding box with non-finite or inverted coordinates."""


# --- matching -----------------------------------------------------------------

class LengthMismatch(DasError):
    """Two aligned sequences have different lengths."""


class EmptyMatrix(DasError):
    """Assignment requested on a matrix with no rows or no columns."""


class NoContributingImages(DasError):
    """Every image was excluded from the flatness expectation for some pass."""


# --- prototypes ---------------------------------------------------------------

class EmptyPass(DasError):
    """A pass with no images where at least one is required."""


class ImageWithoutProposals(DasError):
    """No image in the pass carries any proposals."""


class DimMismatch(DasError):
    """Prototype or feature dimensionalities disagree."""


class SingleClass(DasError):
    """Off-diagonal statistics are undefined for a single class."""


# --- score aggregation --------------------------------------------------------

class EmptyList(DasError):
    """An operation that needs at least one value received none."""


class NoDetections(DasError):
    """No detection survives the confidence threshold."""


class InsufficientSamples(DasError):
    """Too few pooled features to fit the requested Gaussian."""


# --- supervised evaluation ----------------------------------------------------

class NoGroundTruth(DasError):
    """Ground truth is required but absent."""


class DegenerateVariance(DasError):
    """Correlation undefined because one series is constant."""


# --- synthetic harness --------------------------------------------------------

class EmptyParameters(DasError):
    """Perturbation requested on an empty parameter vector."""
