"""Exception hierarchy shared across the batmine pipeline."""


class BatmineError(Exception):
    """Base class for all batmine errors."""


# --- corpus ingestion ---

class MalformedMarkup(BatmineError):
    """Input markup cannot be parsed into the fixture dialect."""


class MissingDoi(BatmineError):
    """Neither the caller nor the markup supplied a DOI."""


class UnknownFigure(BatmineError):
    """Graph metadata refers to a figure not present in the document."""


# --- gateway ---

class GatewayError(BatmineError):
    """Base class for gateway failures."""


class MissingSlot(GatewayError):
    """A prompt template slot was not provided."""


class SchemaViolation(GatewayError):
    """Response failed schema validation after all retries."""


class TransportError(GatewayError):
    """Live endpoint could not be reached or returned garbage."""


class ReplayMiss(GatewayError):
    """Replay transcript has no entry for the rendered prompt."""


class InvalidStage(BatmineError):
    """Paragraph categorization called with an inconsistent stage/major pair."""


# --- graph digitizer ---

class DigitizerError(BatmineError):
    """Base class for digitizer failures."""


class DetectorUnavailable(DigitizerError):
    """The configured object-detection backend cannot run."""


class NoAxesFound(DigitizerError):
    """No axis frame could be located in the image."""


class DegenerateTicks(DigitizerError):
    """Axis ticks are missing or coincide in pixel space."""


class CalibrationResidual(DigitizerError):
    """Least-squares axis fit misses its own ticks by more than the bound."""


class ColorAmbiguity(DigitizerError):
    """Data-line colors are too close to separate; graph is excluded."""


class NoDataPixels(DigitizerError):
    """Nothing remains after background removal and object stripping."""


class TooFewPoints(DigitizerError):
    """A traced cluster spans fewer than two pixel columns."""


class Unextractable(DigitizerError):
    """End-to-end digitization failed; ``cause`` carries the triggering error."""

    def __init__(self, cause: DigitizerError):
        super().__init__(f"graph unextractable: {cause}")
        self.cause = cause


class SpecInvalid(BatmineError):
    """Fixture spec violates its own invariants."""


# --- standardizer ---

class UnknownMaterial(BatmineError):
    """Material name not found in the chemical dictionary."""


class MissingDensity(BatmineError):
    """Concentration conversion requires a density that was not supplied."""


class NegativeValue(BatmineError):
    """Quantity values must be non-negative."""


class InvalidConcentration(BatmineError):
    """Concentration outside its physically meaningful domain (e.g. wt% >= 100)."""


class UnknownUnit(BatmineError):
    """Unit string not in the accepted-unit table for its quantity kind."""


class DimensionMismatch(BatmineError):
    """Unit belongs to a different quantity kind than requested."""


class SeriesTooShort(BatmineError):
    """Cycle series has fewer than two points."""


# --- feature encoding / ML ---

class EmptyDataset(BatmineError):
    """Schema construction needs at least one record."""


class SchemaMismatch(BatmineError):
    """Record cannot be encoded under the given feature schema."""


class TooFewSamples(BatmineError):
    """Train/test split needs at least two samples."""


class DegenerateTargets(BatmineError):
    """Classification training set contains a single class."""


class WidthMismatch(BatmineError):
    """Prediction input width differs from training width."""


class LengthMismatch(BatmineError):
    """Truth and prediction vectors differ in length."""


# --- pipeline / CLI ---

class ConfigInvalid(BatmineError):
    """Pipeline configuration is malformed or inconsistent."""


class StageInputMissing(BatmineError):
    """A pipeline stage's declared input artifact does not exist."""


class IoFailure(BatmineError):
    """Report or artifact could not be written."""
