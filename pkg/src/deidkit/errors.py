"""Exception types. Messages never carry PHI: only types, field names, counts."""


class DeidError(Exception):
    """Base class for every error raised by deidkit."""


class SchemaError(DeidError):
    pass


class UnknownDataType(SchemaError):
    pass


class UnreviewedSchema(SchemaError):
    pass


class SchemaLoadError(SchemaError):
    pass


class BatchTooLarge(SchemaError):
    pass


class EmptyValue(DeidError):
    pass


class ExtractorFailure(DeidError):
    pass


class ResolutionError(DeidError):
    pass


class HintNotFound(ResolutionError):
    pass


class SurfaceNotInHint(ResolutionError):
    pass


class RelexError(DeidError):
    pass


class DecisionFailure(RelexError):
    pass


class GenerationFailure(RelexError):
    pass


class FormatMismatch(GenerationFailure):
    pass


class IndexUnavailable(RelexError):
    pass


class UnsupportedAudioFormat(DeidError):
    pass


class ClassifierFailure(DeidError):
    pass


class AgentError(DeidError):
    """Transport-level failure talking to a remote model endpoint."""


class AgentTimeout(AgentError):
    pass


class AuthFailure(AgentError):
    pass


class MalformedResponse(AgentError):
    pass


class ConfigError(DeidError):
    pass


class SpanFileError(DeidError):
    pass
