"""Exception types shared across the package."""


class PipelineError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigError(PipelineError):
    """Invalid or contradictory run configuration."""


class MissingPlaceholder(PipelineError):
    """A required template placeholder has no binding."""


class ImageDecodeError(PipelineError):
    """A diagram payload is not a decodable raster image."""


class EmptyResponse(PipelineError):
    """The model returned an empty reply, even after one retry."""


class ParseError(PipelineError):
    """A structured model reply could not be parsed, even after repair."""


class BackendError(PipelineError):
    """Base class for completion-transport failures."""


class BackendTimeout(BackendError):
    """The provider did not answer within the configured timeout."""


class RateLimited(BackendError):
    """The provider kept rate-limiting past the retry budget."""


class AuthError(BackendError):
    """Credentials rejected; never retried."""


class TransportError(BackendError):
    """Connection-level or server-side HTTP failure."""


class ReplayMiss(BackendError):
    """No replay entry matches the request key."""


class ManifestError(PipelineError):
    """Dataset manifest missing, unreadable, or inconsistent."""


class SchemaError(PipelineError):
    """A record, trace, or report file violates its schema."""


class InsufficientRecords(PipelineError):
    """Asked to sample more records than are available."""


class EmptyInput(PipelineError):
    """An aggregation was called with nothing to aggregate."""


class UnknownGroupKey(PipelineError):
    """Unsupported grouping key for the timing report."""


class Unextractable(PipelineError):
    """No usable answer could be recovered from a solver output."""
