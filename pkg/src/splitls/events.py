"""Agreement events emitted by the client, engine and crypto service.

Each event records the client random, server random and a hash of the
transcript prefix the signature covers (ClientHello..Certificate), so a log
from a run can be checked for one-to-one agreement afterwards.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional


class EventKind(Enum):
    E_SENT_CR_SR_TO_CS = "E_sent_cr_sr_to_CS"
    CS_SENT_CV = "CS_sent_CV"
    E_RECVD_CV = "E_recvd_CV"
    E_PRE_SERVER_FINISHED = "E_pre_server_finished"
    C_CLIENT_FINISHED = "C_client_finished"


CHAIN = (EventKind.E_SENT_CR_SR_TO_CS, EventKind.CS_SENT_CV, EventKind.E_RECVD_CV,
         EventKind.E_PRE_SERVER_FINISHED, EventKind.C_CLIENT_FINISHED)


@dataclass(frozen=True)
class Event:
    index: int
    kind: EventKind
    tag: str
    n_c: bytes
    n_s: bytes
    th: bytes
    timestamp: float

    def key(self) -> tuple[bytes, bytes, bytes]:
        return self.n_c, self.n_s, self.th

    def to_line(self) -> str:
        return "\t".join((str(self.index), self.kind.value, self.tag, self.n_c.hex(), self.n_s.hex(),
                          self.th.hex(), f"{self.timestamp:.6f}"))


class EventLog:
    """Append-only, thread-safe event collector."""

    def __init__(self) -> None:
        self._events: list[Event] = []
        self._lock = threading.Lock()

    def emit(self, kind: EventKind, tag: str, n_c: bytes, n_s: bytes, th: bytes) -> Event:
        with self._lock:
            ev = Event(len(self._events), kind, tag, bytes(n_c), bytes(n_s), bytes(th), time.monotonic())
            self._events.append(ev)
            return ev

    def append(self, event: Event) -> Event:
        """Re-append an existing event (used to build synthetic logs)."""
        with self._lock:
            ev = Event(len(self._events), event.kind, event.tag, event.n_c, event.n_s, event.th,
                       event.timestamp)
            self._events.append(ev)
            return ev

    @property
    def events(self) -> list[Event]:
        with self._lock:
            return list(self._events)

    def __len__(self) -> int:
        return len(self._events)


def emit(log: Optional[EventLog], kind: EventKind, tag: str, n_c: bytes, n_s: bytes, th: bytes) -> None:
    if log is not None:
        log.emit(kind, tag, n_c, n_s, th)
