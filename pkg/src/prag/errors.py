"""Exception types shared across the package.

Every error raised on purpose derives from PragError so callers can catch
one base class at API boundaries. Wire-facing errors carry enough context
to be mapped onto protocol ERROR frames.
"""


class PragError(Exception):
    """Base class for all errors raised by this package."""


class CorrectnessMarginViolated(PragError):
    """Requested parameters cannot guarantee exact decoding.

    Recovery options: shrink the plaintext modulus, reduce the number of
    matrix columns, or widen the ciphertext modulus.
    """


class PlaintextOutOfRange(PragError):
    """A plaintext value does not fit the configured plaintext modulus."""


class DimensionMismatch(PragError):
    """Operand shapes disagree (vector lengths, matrix dims, embedding dims)."""


class ParseError(PragError):
    """A corpus line or config entry could not be parsed."""


class DuplicateId(PragError):
    """The same document id appeared more than once."""


class InvalidK(PragError):
    """Cluster count is zero, negative, or exceeds the number of points."""


class ClusterOverflow(PragError):
    """A packed cluster does not fit the requested chunk budget."""


class UnequalStreamLengths(PragError):
    """Matrix columns were given streams of differing lengths."""


class BadMagic(PragError):
    """File does not start with the expected index magic."""


class VersionUnsupported(PragError):
    """Index file version is newer than this build understands."""


class TruncatedFile(PragError):
    """Index file ended before a declared section was complete."""


class TransportError(PragError):
    """Socket-level failure (connect, send, receive, premature close)."""


class ProtocolError(PragError):
    """Peer sent a frame that violates the wire protocol."""


class DecodeSizeMismatch(PragError):
    """An answer decoded to a different length than the target matrix implies."""


class FramingError(PragError):
    """A packed byte stream is internally inconsistent (lengths overrun)."""


class InvalidDegree(PragError):
    """Graph degree is not in [1, n_nodes - 1]."""


class InvalidEntryPoint(PragError):
    """Traversal entry node id is not a node of the graph."""


class UnknownDocId(PragError):
    """A document id is not present in the index."""


class UnknownCluster(PragError):
    """A cluster id is outside [0, k)."""


class NonFiniteInput(PragError):
    """An embedding contains NaN or infinite components."""


class InvalidConfig(PragError):
    """A benchmark or generator configuration value is out of range."""
