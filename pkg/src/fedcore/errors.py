class FedcoreError(Exception):
    """Base class for every error raised by the package."""

    code = "fedcore_error"


class ValidationError(FedcoreError, ValueError):
    code = "validation_error"


class DimensionMismatchError(ValidationError):
    code = "dimension_mismatch"


class ArchiveHeaderError(FedcoreError):
    code = "archive_header"


class ArchiveTruncatedError(FedcoreError):
    code = "archive_truncated"


class NonFiniteFeatureError(FedcoreError):
    code = "non_finite"


class TooFewSamplesError(ValidationError):
    code = "too_few_samples"


class DegenerateAffinityError(FedcoreError):
    code = "degenerate_affinity"


class EmptyInputError(ValidationError):
    code = "empty_input"


class ProtocolError(FedcoreError):
    code = "protocol_error"


class ConfigurationError(ValidationError):
    code = "configuration_error"


class UndefinedMetricError(FedcoreError, ValueError):
    code = "undefined_metric"
