"""Thin training-loop client for the proofloop verification service."""

from .session import (
    BrokerDown,
    ClientError,
    ClientSession,
    ConnectionFailed,
    DeadlineExceeded,
    JobOutcome,
    NotFound,
    ProtocolViolation,
    QueueFull,
    RetryPolicy,
    UnknownJob,
    trajectory_jsonl_line,
)

__version__ = "0.1.0"
