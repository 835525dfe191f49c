"""Exception hierarchy shared by all chartrl components.

Three families matter to callers:

* data/config problems raised before any work starts (``ConfigError``,
  ``DataError`` and friends) -- the CLI maps these to exit codes 2 and 3;
* unavailable runtime dependencies (``ComponentUnavailable`` subclasses) --
  transport faults, missing worker binaries; CLI exit code 4;
* pipeline bugs (``EncoderMismatch``, ``TypeMismatch``, ``ShapeMismatch``) --
  these indicate wiring mistakes, never bad model output.
"""


class ChartRLError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ChartRLError):
    """Invalid or unusable run configuration (missing paths, bad values)."""


class DataError(ChartRLError):
    """Malformed or unusable input data (shards, records, fixtures)."""


class EmptyQASet(DataError):
    """A QA set with zero items was passed where questions are required."""


class EmptyInput(DataError):
    """An analytics operation received an empty record set."""


class GroupTooSmall(DataError):
    """Fewer than two rollouts; group standardization is undefined."""


class ComponentUnavailable(ChartRLError):
    """A runtime dependency (service, worker binary) cannot be reached."""


class InspectorUnavailable(ComponentUnavailable):
    """Inspector backend failed after all retries.

    ``index`` is the position of the failing question when the failure
    happened inside a QA-set evaluation, else None.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class SandboxUnavailable(ComponentUnavailable):
    """Render worker binary is missing or cannot be spawned."""


class EncoderUnavailable(ComponentUnavailable):
    """Remote embedding service failed after all retries."""


class TransportError(ChartRLError):
    """Transient transport failure; retried internally by clients."""


class UnparseableAnswer(ChartRLError):
    """Free-text answer could not be normalized to the expected type.

    Counts as a failed verdict during reward computation, never a crash.
    """


class TypeMismatch(ChartRLError):
    """Normalized answer kind is incompatible with the gold answer type."""


class EncoderMismatch(ChartRLError):
    """Vectors from different encoders (or dimensions) were compared."""


class ZeroVector(ChartRLError):
    """Cosine similarity is undefined for a zero-length-norm vector."""


class ShapeMismatch(ChartRLError):
    """Paired arrays have incompatible shapes."""


class DecodeError(DataError):
    """Image bytes could not be decoded."""


class UnparseableScript(ChartRLError):
    """A plotting script could not be tokenized; counted and skipped."""
