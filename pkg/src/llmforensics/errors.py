"""Exception hierarchy shared across the harness."""


class ForensicsError(Exception):
    """Base class for all harness errors."""


class ManifestError(ForensicsError):
    """Base class for manifest loading failures."""


class MissingFileError(ManifestError):
    """A referenced image, ground-truth, or mask file does not exist."""


class SchemaError(ManifestError):
    """A manifest line is malformed or violates a field invariant."""


class DuplicateIdError(ManifestError):
    """Two manifest entries share the same id."""


class DecodeError(ForensicsError):
    """An image file could not be decoded."""


class KTooLargeError(ForensicsError):
    """Requested more few-shot exemplars than the pool holds."""


class PromptError(ForensicsError):
    """A prompt file is malformed or a PromptSpec invariant is violated."""


class TransportError(ForensicsError):
    """Network failure that survived the retry budget."""


class AuthMissingError(ForensicsError):
    """No API credential found in the environment."""


class UnscriptedRequestError(ForensicsError):
    """The mock provider received a request it has no script entry for."""


class RateAbortError(ForensicsError):
    """The caller cancelled while queued for a rate token."""


class UnknownModelError(ForensicsError):
    """The price table has no entry for the requested model id."""


class JudgeParseError(ForensicsError):
    """Fewer than four rubric scores could be extracted from judge output."""


class OneClassOnlyError(ForensicsError):
    """AUC requested but the sample set contains a single label."""


class CacheMissError(ForensicsError):
    """Replay mode hit a request that is absent from the cache."""


class ToleranceExceededError(ForensicsError):
    """A synthetic validation scenario missed its analytic target."""

    def __init__(self, message, measured=None, expected=None):
        super().__init__(message)
        self.measured = measured
        self.expected = expected


class ConfigError(ForensicsError):
    """Invalid run configuration; raised before any network call."""
