"""Exception hierarchy shared by every resum module.

All domain failures derive from :class:`ResumError`; the CLI maps those to
exit status 1.
"""

from __future__ import annotations


class ResumError(Exception):
    """Base class for all domain errors."""


class InvalidParameterError(ResumError, ValueError):
    pass


class InvalidInputError(ResumError, ValueError):
    pass


class ConfigurationError(ResumError):
    pass


class ParseError(ResumError):
    """A file or record did not match its schema."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class ConflictError(ResumError):
    pass


class IntegrityError(ResumError):
    pass


# --- gateway -----------------------------------------------------------------


class GatewayError(ResumError):
    pass


class TransportError(GatewayError):
    """Network failure or timeout that survived all retries."""


class CacheMissError(TransportError):
    """Offline mode was requested and the response is not cached."""


class ProviderError(GatewayError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body[:500]
        super().__init__(f"provider returned HTTP {status}: {self.body}")


class EmptyResponseError(GatewayError):
    pass


# --- model output parsing ------------------------------------------------------


class ResponseParseError(ResumError):
    """Model output does not contain a usable evaluation object."""


class IncompleteResponseError(ResponseParseError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"evaluation is missing key {key!r}")


class ScoreRangeError(ResponseParseError):
    pass


# --- evaluation and refinement ---------------------------------------------------


class EvaluationFailedError(ResumError):
    def __init__(self, message: str, raw_response: str = ""):
        self.raw_response = raw_response
        super().__init__(message)


class PartialFailureError(ResumError):
    def __init__(self, failures: dict[str, Exception]):
        self.failures = failures
        detail = "; ".join(f"{agent}: {exc}" for agent, exc in failures.items())
        super().__init__(f"{len(failures)} agent(s) failed: {detail}")


class GenerationFailedError(ResumError):
    pass


# --- meta-evaluation -----------------------------------------------------------


class MissingScoresError(ResumError):
    def __init__(self, missing: list[str]):
        self.missing = missing
        shown = ", ".join(missing[:20])
        more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
        super().__init__(f"metric scores missing for summaries: {shown}{more}")


class UndefinedCorrelationError(ResumError):
    pass
