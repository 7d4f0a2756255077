"""Exception and warning types shared across the package."""


class MLGuardError(Exception):
    """Base class for every error raised by this package."""


class NotFound(MLGuardError):
    """A locator did not resolve to any readable resource."""


# -- contract documents -------------------------------------------------

class ContractError(MLGuardError):
    """Base class for contract parsing and validation failures.

    `path` is the key path within the document, e.g.
    "Contract.Preconditions.Distribution_Matches.Action_if_violated".
    """

    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ContractSyntaxError(ContractError):
    """The document is not well-formed (YAML error, duplicate key, bad scalar type)."""


class UnknownConditionKind(ContractError):
    """A condition key is not part of the contract grammar."""


class UnknownAction(ContractError):
    """Action_if_violated is outside the closed action set."""


class MissingRequiredField(ContractError):
    """A required key is absent (or present with a null value)."""


class ThresholdOutOfRange(ContractError):
    """Confidence_threshold fell outside the open interval (0, 1)."""


class UnexpectedKey(ContractError):
    """A known block contains a key the grammar does not define."""


class UnknownDetectorType(ContractError):
    """Validation_model Type is not a registered detector family."""


class UnknownDetectorMethod(ContractError):
    """Validation_model Method is not a registered detector method."""


# -- schemas and record batches -----------------------------------------

class MalformedSchema(MLGuardError):
    """A schema document violates the schema format or its invariants."""


class EmptyBatch(MLGuardError):
    """An operation that needs data received a batch with no rows or columns."""


# -- detectors -----------------------------------------------------------

class DetectorError(MLGuardError):
    """Base class for detector training and evaluation faults."""


class TooFewRows(DetectorError):
    """Not enough training rows (or held-out rows) to fit and calibrate."""


class NonNumericFeature(DetectorError):
    """A column required to be numeric contains a non-numeric value."""


class DimensionMismatch(DetectorError):
    """Vector/matrix dimensions disagree with the model."""


class TooFewSamples(DetectorError):
    """A two-sample test needs at least 5 points per sample."""


class SingularCovariance(DetectorError):
    """Covariance factorization failed; should be unreachable after shrinkage."""


class FeatureNameMismatch(DetectorError):
    """Input columns do not cover the feature names the model was trained on."""


class MalformedModelDocument(DetectorError):
    """A serialized detector document violates the model format invariants."""


class DegenerateFeatureWarning(UserWarning):
    """A feature had zero variance and was floored during training."""


# -- bundles -------------------------------------------------------------

class BundleError(MLGuardError):
    """Base class for bundle build and load failures."""


class ValidationFailed(BundleError):
    """Contract validation reported errors; the bundle was not built."""


class TrainingFailed(BundleError):
    """Detector training failed; message names the owning condition."""


class IoFailure(BundleError):
    """Filesystem trouble while building or loading a bundle."""


class DigestMismatch(BundleError):
    """A bundle entry's content hash does not match the manifest."""


class MissingEntry(BundleError):
    """A file listed in (or required by) the manifest is absent."""


class VersionUnsupported(BundleError):
    """The bundle format version or digest algorithm is not supported."""


# -- guard runtime -------------------------------------------------------

class GuardError(MLGuardError):
    """Base class for guard runtime faults (distinct from contract rejections)."""


class AdapterFailure(GuardError):
    """The guarded model call failed."""


class BundleInvariantBroken(GuardError):
    """A loaded bundle turned out to be internally inconsistent."""


class UnsupportedModelFormat(GuardError):
    """The model Location names a format this runtime does not load.

    Supported locations are `.json` built-in linear models and
    `http://`/`https://` prediction endpoints.
    """


class Timeout(GuardError):
    """The prediction endpoint did not answer within the configured timeout."""


class TransportFailure(GuardError):
    """The prediction request failed at the transport level after all retries."""


class MalformedResponse(GuardError):
    """The prediction endpoint answered 200 with an unusable body."""


class SinkFailureWarning(UserWarning):
    """Writing a violation record failed; guarding continued."""


# -- harness -------------------------------------------------------------

class UnknownColumn(MLGuardError):
    """A shift names a column the batch does not have."""
