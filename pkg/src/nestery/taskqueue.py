"""Durable at-least-once task queue with idempotent effect dedup.

Every state change is journaled before it is acknowledged to the caller, so
a crash at any point between journal writes loses nothing: enqueued commands
are redelivered until acked, and the effect registry keeps redeliveries from
applying the same idempotency key twice.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import journal
from .model import Command, UnknownMessage, command_from_dict, command_to_dict

DEFAULT_VISIBILITY_TIMEOUT_S = 30.0
DEFAULT_MAX_ATTEMPTS = 5


class MsgState(str, Enum):
    PENDING = "PENDING"
    INFLIGHT = "INFLIGHT"
    ACKED = "ACKED"


@dataclass
class QueueMessage:
    msg_id: int
    command: Command
    idempotency_key: str
    enqueued_at: float
    state: MsgState = MsgState.PENDING
    attempts: int = 0
    visibility_deadline: Optional[float] = None


@dataclass
class RecoveryReport:
    messages: int
    pending: int
    inflight: int
    acked: int
    dead: int
    corrupt_offset: Optional[int] = None


class TaskQueue:
    """Journal-backed FIFO with visibility timeouts and a dead-letter cap.

    Safe for concurrent producers and consumers; all operations serialize on
    one lock, and the journal append happens before an operation returns.
    """

    def __init__(
        self,
        path: str,
        now: Optional[Callable[[], float]] = None,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        fsync: bool = True,
    ):
        self.path = path
        self.now = now or time.time
        self.max_attempts = max_attempts
        self._lock = threading.Lock()
        self._messages: dict[int, QueueMessage] = {}
        self._dead: list[QueueMessage] = []
        self._next_id = 1
        self.last_recovery: Optional[RecoveryReport] = None
        self._writer: Optional[journal.JournalWriter] = None
        self._fsync = fsync
        self.recover()

    # -- recovery -----------------------------------------------------------

    def recover(self) -> RecoveryReport:
        """Rebuild queue state by replaying the journal. Stops at the first
        corrupt record, truncates the tail, and reports the offset."""
        with self._lock:
            if self._writer is not None:
                self._writer.close()
                self._writer = None
            records, corrupt_offset = journal.read_records(self.path)
            self._messages = {}
            self._dead = []
            self._next_id = 1
            for kind, payload in records:
                body = json.loads(payload.decode("utf-8"))
                if kind == journal.KIND_ENQUEUED:
                    msg = QueueMessage(
                        msg_id=body["msg_id"],
                        command=command_from_dict(body["command"]),
                        idempotency_key=body["key"],
                        enqueued_at=body["enqueued_at"],
                    )
                    self._messages[msg.msg_id] = msg
                    self._next_id = max(self._next_id, msg.msg_id + 1)
                elif kind == journal.KIND_DELIVERED:
                    msg = self._messages.get(body["msg_id"])
                    if msg is not None and msg.state is not MsgState.ACKED:
                        msg.state = MsgState.INFLIGHT
                        msg.attempts += 1
                        msg.visibility_deadline = body["deadline"]
                elif kind == journal.KIND_ACKED:
                    msg = self._messages.get(body["msg_id"])
                    if msg is not None:
                        msg.state = MsgState.ACKED
                        msg.visibility_deadline = None
            now = self.now()
            for msg in self._messages.values():
                if (
                    msg.state is MsgState.INFLIGHT
                    and msg.visibility_deadline is not None
                    and msg.visibility_deadline <= now
                ):
                    msg.state = MsgState.PENDING
                    msg.visibility_deadline = None
            self._park_exhausted()
            self._writer = journal.JournalWriter(self.path, fsync=self._fsync)
            if corrupt_offset is not None:
                self._writer.truncate_to(corrupt_offset)
            report = RecoveryReport(
                messages=len(self._messages),
                pending=sum(1 for m in self._live() if m.state is MsgState.PENDING),
                inflight=sum(1 for m in self._live() if m.state is MsgState.INFLIGHT),
                acked=sum(1 for m in self._messages.values() if m.state is MsgState.ACKED),
                dead=len(self._dead),
                corrupt_offset=corrupt_offset,
            )
            self.last_recovery = report
            return report

    def _live(self):
        dead_ids = {m.msg_id for m in self._dead}
        return [m for m in self._messages.values() if m.msg_id not in dead_ids]

    def _park_exhausted(self) -> None:
        # Dead-lettering is derived state: a message whose delivery count hit
        # the cap without an ack parks once its last deadline has lapsed.
        now = self.now()
        dead_ids = {m.msg_id for m in self._dead}
        for msg in self._messages.values():
            if msg.msg_id in dead_ids or msg.state is MsgState.ACKED:
                continue
            deadline_over = (
                msg.visibility_deadline is None or msg.visibility_deadline <= now
            )
            if msg.attempts >= self.max_attempts and deadline_over:
                if msg.state is MsgState.INFLIGHT:
                    msg.state = MsgState.PENDING
                    msg.visibility_deadline = None
                self._dead.append(msg)

    # -- operations ---------------------------------------------------------

    def enqueue(self, command: Command, idempotency_key: str) -> int:
        with self._lock:
            msg_id = self._next_id
            self._next_id += 1
            enqueued_at = self.now()
            payload = json.dumps(
                {
                    "msg_id": msg_id,
                    "key": idempotency_key,
                    "enqueued_at": enqueued_at,
                    "command": command_to_dict(command),
                },
                separators=(",", ":"),
            ).encode("utf-8")
            # durable before visible: journal first, then register in memory
            self._writer.append(journal.KIND_ENQUEUED, payload)
            self._messages[msg_id] = QueueMessage(
                msg_id=msg_id,
                command=command,
                idempotency_key=idempotency_key,
                enqueued_at=enqueued_at,
            )
            return msg_id

    def receive(
        self,
        worker_id: str = "worker",
        visibility_timeout_s: float = DEFAULT_VISIBILITY_TIMEOUT_S,
    ) -> Optional[QueueMessage]:
        """Oldest deliverable message, or None. The message goes INFLIGHT
        until its visibility deadline; an unacked message becomes deliverable
        again once the deadline lapses, up to the attempt cap."""
        with self._lock:
            now = self.now()
            for msg in self._messages.values():
                if (
                    msg.state is MsgState.INFLIGHT
                    and msg.visibility_deadline is not None
                    and msg.visibility_deadline <= now
                ):
                    msg.state = MsgState.PENDING
                    msg.visibility_deadline = None
            self._park_exhausted()
            dead_ids = {m.msg_id for m in self._dead}
            for msg_id in sorted(self._messages):
                msg = self._messages[msg_id]
                if msg.state is not MsgState.PENDING or msg.msg_id in dead_ids:
                    continue
                deadline = now + visibility_timeout_s
                payload = json.dumps(
                    {"msg_id": msg.msg_id, "deadline": deadline, "worker": worker_id},
                    separators=(",", ":"),
                ).encode("utf-8")
                self._writer.append(journal.KIND_DELIVERED, payload)
                msg.state = MsgState.INFLIGHT
                msg.attempts += 1
                msg.visibility_deadline = deadline
                return msg
            return None

    def ack(self, msg_id: int) -> bool:
        """Mark a delivered message done. Returns True on the first ack and
        False when the message was already acked (idempotent success)."""
        with self._lock:
            msg = self._messages.get(msg_id)
            if msg is None:
                raise UnknownMessage(f"no message {msg_id}")
            if msg.state is MsgState.ACKED:
                return False
            payload = json.dumps({"msg_id": msg_id}, separators=(",", ":")).encode("utf-8")
            self._writer.append(journal.KIND_ACKED, payload)
            msg.state = MsgState.ACKED
            msg.visibility_deadline = None
            return True

    def dead_letters(self) -> list[QueueMessage]:
        with self._lock:
            return list(self._dead)

    def stats(self) -> dict:
        with self._lock:
            dead_ids = {m.msg_id for m in self._dead}
            live = [m for m in self._messages.values() if m.msg_id not in dead_ids]
            return {
                "pending": sum(1 for m in live if m.state is MsgState.PENDING),
                "inflight": sum(1 for m in live if m.state is MsgState.INFLIGHT),
                "acked": sum(1 for m in self._messages.values() if m.state is MsgState.ACKED),
                "dead": len(self._dead),
                "total": len(self._messages),
            }

    def get(self, msg_id: int) -> QueueMessage:
        with self._lock:
            msg = self._messages.get(msg_id)
            if msg is None:
                raise UnknownMessage(f"no message {msg_id}")
            return msg

    def close(self) -> None:
        with self._lock:
            if self._writer is not None:
                self._writer.close()
                self._writer = None


class EffectRegistry:
    """Durable record of which idempotency keys have been applied, plus the
    result each application produced so a redelivery can answer identically.

    The registry write happens after the effect and within the same critical
    section, before the message is acked: a crash before the write causes a
    redeliver-and-reapply (the effect did not survive either), a crash after
    it causes a redeliver-and-skip.
    """

    def __init__(self, path: str, fsync: bool = True):
        self.path = path
        self._lock = threading.Lock()
        self._applied: dict[str, dict] = {}
        records, corrupt_offset = journal.read_records(path)
        for kind, payload in records:
            if kind != journal.KIND_EFFECT:
                continue
            body = json.loads(payload.decode("utf-8"))
            self._applied[body["key"]] = body["result"]
        self._writer = journal.JournalWriter(path, fsync=fsync)
        if corrupt_offset is not None:
            self._writer.truncate_to(corrupt_offset)

    def __contains__(self, key: str) -> bool:
        with self._lock:
            return key in self._applied

    def get(self, key: str) -> Optional[dict]:
        with self._lock:
            return self._applied.get(key)

    def record(self, key: str, result: dict) -> None:
        with self._lock:
            payload = json.dumps(
                {"key": key, "result": result}, separators=(",", ":")
            ).encode("utf-8")
            self._writer.append(journal.KIND_EFFECT, payload)
            self._applied[key] = result

    def keys(self) -> list[str]:
        with self._lock:
            return list(self._applied)

    def close(self) -> None:
        with self._lock:
            self._writer.close()


def dedupe_effect(
    registry: EffectRegistry, idempotency_key: str, handler: Callable[[], dict]
) -> tuple[str, dict]:
    """Run `handler` at most once per key. Returns ("applied", result) on
    first application and ("skipped", original_result) on any later call.
    An exception in the handler records nothing, so a retry re-executes."""
    prior = registry.get(idempotency_key)
    if prior is not None:
        return "skipped", prior
    result = handler()
    registry.record(idempotency_key, result)
    return "applied", result
