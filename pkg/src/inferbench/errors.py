"""Exception hierarchy shared by every inferbench module."""


class InferBenchError(Exception):
    """Base class for all inferbench errors."""


class ConfigError(InferBenchError):
    """A configuration document is unreadable or violates its schema."""


class BackendError(InferBenchError):
    """Generic failure raised by an inference backend."""


class UnsupportedModeError(BackendError):
    """The backend cannot run this (workload, mode) pair."""


class SessionOpenError(BackendError):
    """Opening or preparing a session failed."""


class SessionLimitError(BackendError):
    """Opening another session would exceed max_concurrent_sessions."""


class BackendConcurrencyError(BackendError):
    """The backend cannot host the number of concurrent sessions requested."""


class TraceExhaustedError(BackendError):
    """A replay session has no trace entries left."""


class OutOfMemoryError(BackendError):
    """The input does not fit into the backend's memory budget."""


class HarnessError(InferBenchError):
    """Protocol-level failure while executing a workload."""


class PlanError(HarnessError):
    """A RunPlan violates its preconditions."""


class NoInferencesError(HarnessError):
    """Not a single inference completed within the time limit."""


class GraphError(InferBenchError):
    """An operator graph is malformed."""


class CycleError(GraphError):
    """The operator graph contains a cycle."""


class MissingCostError(InferBenchError):
    """The cost map lacks an entry required for latency estimation."""


class ScoringError(InferBenchError):
    """Inputs to the scoring system are incomplete or inconsistent."""


class IngestError(InferBenchError):
    """A latency table could not be parsed.

    ``row`` is the 1-based line number of the offending row, if known.
    """

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row
