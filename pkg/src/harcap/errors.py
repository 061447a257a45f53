"""Exception hierarchy shared across the harness."""


class HarcapError(Exception):
    """Base class for every error raised by harcap."""


class ParseError(HarcapError, ValueError):
    pass


class DuplicateId(HarcapError, ValueError):
    pass


class DuplicateKeyword(HarcapError, ValueError):
    pass


class EmptyEntry(HarcapError, ValueError):
    pass


class MissingLexiconEntry(HarcapError, KeyError):
    pass


class DimensionMismatch(HarcapError, ValueError):
    pass


class KTooLarge(HarcapError, ValueError):
    pass


class ZeroVector(HarcapError, ValueError):
    pass


class EmptyTokenization(HarcapError, ValueError):
    pass


class TooManyImages(HarcapError, ValueError):
    pass


class AmbiguousJudgeOutput(HarcapError, ValueError):
    pass


class ProviderError(HarcapError):
    """Anything that went wrong talking to a model service."""


class TransportError(ProviderError):
    pass


class BackendError(ProviderError):
    def __init__(self, status_code: int, body: str):
        super().__init__(f"backend returned HTTP {status_code}: {body[:500]}")
        self.status_code = status_code
        self.body = body


class EmptyResponse(ProviderError):
    pass


class DimensionDrift(ProviderError):
    pass


class ConfigError(HarcapError, ValueError):
    pass


class MissingArtifacts(HarcapError, FileNotFoundError):
    pass
