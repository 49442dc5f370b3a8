"""Revealed-information accounting for online protocol runs.

An audit scope counts two things while active:

* ``public_bits`` - circuit output bits decoded into the clear as the
  prediction outcome. Output shares of intermediate garbled circuits are
  masked by fresh randomness and are deliberately not counted here.
* ``secret_reconstructs`` - calls that combine both parties' shares of a
  secret. The online phase must never do this; masked Beaver openings go
  through their own code path and are not reconstructions of secrets.

The active log is a process-wide slot guarded by a lock so that party
worker threads report into the scope that spawned them. Scopes do not
nest.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field


@dataclass
class AuditLog:
    public_bits: int = 0
    secret_reconstructs: int = 0
    reveal_events: list = field(default_factory=list)


_lock = threading.Lock()
_active: AuditLog | None = None


@contextmanager
def audit_scope():
    """Collect reveal/reconstruct counters for the enclosed run."""
    global _active
    log = AuditLog()
    with _lock:
        if _active is not None:
            raise RuntimeError("audit scopes do not nest")
        _active = log
    try:
        yield log
    finally:
        with _lock:
            _active = None


def record_public_bits(n: int, what: str = ""):
    with _lock:
        if _active is not None:
            _active.public_bits += n
            _active.reveal_events.append((what, n))


def record_reconstruct():
    with _lock:
        if _active is not None:
            _active.secret_reconstructs += 1
