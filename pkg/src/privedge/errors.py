"""Exception hierarchy shared by all engine modules."""


class PrivEdgeError(Exception):
    """Base class for all engine errors."""

    #: short machine-readable class name used by the CLI
    code = "error"


class ShapeMismatch(PrivEdgeError):
    code = "shape_mismatch"


class SessionMismatch(PrivEdgeError):
    code = "session_mismatch"


class RandomnessError(PrivEdgeError):
    code = "randomness_error"


class TripleExhausted(PrivEdgeError):
    """Online phase requested more triples than the offline phase provided."""

    code = "triple_exhausted"


class MalformedSpec(PrivEdgeError):
    code = "malformed_spec"


class ChannelError(PrivEdgeError):
    code = "channel_error"


class SequenceGap(ChannelError):
    """Frame sequence number not strictly increasing (loss, replay, reorder)."""

    code = "sequence_gap"


class DecodeError(ChannelError):
    code = "decode_error"


class VersionMismatch(PrivEdgeError):
    code = "version_mismatch"


class ParamsMismatch(PrivEdgeError):
    code = "params_mismatch"


class ManifestMismatch(PrivEdgeError):
    code = "manifest_mismatch"


class OtProtocolError(PrivEdgeError):
    code = "ot_protocol_error"


class GarbledTableError(PrivEdgeError):
    """Garbled evaluation produced no valid output label (corruption)."""

    code = "garbled_table_error"


class ProtocolAborted(PrivEdgeError):
    """Peer sent an abort frame or a sub-protocol failed mid-prediction."""

    code = "protocol_aborted"
