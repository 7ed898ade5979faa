"""Exception types shared across the governance pipeline."""


class GovSimError(Exception):
    """Base class for every error raised by this package."""


# --- envelope ---------------------------------------------------------------

class MalformedDocument(GovSimError):
    """Input bytes are not parseable as a telemetry document."""


class SchemaViolation(GovSimError):
    """Document parsed but does not match the canonical envelope schema."""


class InvalidDataType(GovSimError):
    """data_type value outside the enumerated set."""


class InvalidTimestamp(GovSimError):
    """Timestamp missing, unparseable, non-UTC, or out of order."""


class DuplicateStage(GovSimError):
    """Stage timestamp already present on the envelope."""


class NonMonotonicStamp(GovSimError):
    """New stage timestamp precedes the envelope's latest stamp."""


# --- data bus ---------------------------------------------------------------

class AllChannelsDown(GovSimError):
    """Neither the primary nor the auxiliary channel accepted the message."""


# --- ingestion --------------------------------------------------------------

class BusUnavailable(GovSimError):
    """Gateway could not publish; caller may retry."""


class SourceUnavailable(GovSimError):
    """Pollable source kept erroring after the configured retries."""


class RemoteUnavailable(GovSimError):
    """Downstream ingestion endpoint unreachable; message stays queued."""


class SinkUnavailable(GovSimError):
    """Emitter exhausted its retry policy against the ingestion endpoint.

    Carries the partial :class:`~govsim.cna.EmissionReport` as ``report``.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


# --- manipulation -----------------------------------------------------------

class UnrecognizedFormat(GovSimError):
    """Converter input is neither canonical JSON nor key=value lines."""


# --- storage ----------------------------------------------------------------

class WriteOnceViolation(GovSimError):
    """Attempted overwrite of an existing immutable object."""


class RetentionLocked(GovSimError):
    """Immutable object cannot be deleted before its retention deadline."""


class NotFound(GovSimError):
    """No object stored under the requested key."""


class StorageUnavailable(GovSimError):
    """Store is down (fault injection); caller should redeliver later."""


# --- analytics --------------------------------------------------------------

class EmptySample(GovSimError):
    """Statistics requested over zero samples."""


class NegativeDelay(GovSimError):
    """Leg endpoints violate the monotonic stamp invariant."""


class InsufficientBaseline(GovSimError):
    """Observation stream shorter than the baseline training window."""


# --- scenario / runner ------------------------------------------------------

class ConfigInvalid(GovSimError):
    """Scenario document failed validation; lists field-level problems."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario config:\n" + "\n".join(f"  - {p}" for p in self.problems))


class QuiescenceTimeout(GovSimError):
    """Run did not settle within its simulated-time budget."""
