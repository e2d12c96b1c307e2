"""Fog gateway: the coordinating node between sources and the cloud store."""

from .alerts import AlertEngine, AlertEvent, AlertRule, default_rules
from .envelope import AuthenticationError, EnvelopeError, open_envelope, seal
from .gapfill import fill_gaps, fill_session_gaps
from .obd_poller import PollStats, obd_poll_loop
from .records import (
    CHANNELS,
    CSV_HEADER,
    NUMERIC_CHANNELS,
    Pairing,
    SessionManifest,
    TraceRow,
    csv_to_rows,
    rows_to_csv,
    sha256_hex,
    sort_rows,
    validate_rows,
)
from .runner import RunResult, SessionRunner
from .session import (
    Gateway,
    GatewayError,
    GpsFix,
    LocalSource,
    NoActiveSessionError,
    NoDevicesError,
    Session,
    SessionActiveError,
    SessionAlreadyActiveError,
    UnknownSourceError,
    pair_device,
)
from .uploader import (
    KeyMissingError,
    Outbox,
    UploadError,
    UploadReceipt,
    UploadRejectedError,
    finalize_and_upload,
    flush_outbox,
)

__all__ = [
    "AlertEngine",
    "AlertEvent",
    "AlertRule",
    "AuthenticationError",
    "CHANNELS",
    "CSV_HEADER",
    "EnvelopeError",
    "Gateway",
    "GatewayError",
    "GpsFix",
    "KeyMissingError",
    "LocalSource",
    "NoActiveSessionError",
    "NoDevicesError",
    "NUMERIC_CHANNELS",
    "Outbox",
    "Pairing",
    "PollStats",
    "RunResult",
    "Session",
    "SessionActiveError",
    "SessionAlreadyActiveError",
    "SessionManifest",
    "SessionRunner",
    "TraceRow",
    "UnknownSourceError",
    "UploadError",
    "UploadReceipt",
    "UploadRejectedError",
    "csv_to_rows",
    "default_rules",
    "fill_gaps",
    "fill_session_gaps",
    "finalize_and_upload",
    "flush_outbox",
    "obd_poll_loop",
    "open_envelope",
    "pair_device",
    "rows_to_csv",
    "seal",
    "sha256_hex",
    "sort_rows",
    "validate_rows",
]
