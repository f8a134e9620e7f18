"""Admission control and time-based allocations.

The scheduler is the single authority over capacity: every launch, start,
rescale and volume operation asks it whether the request fits the target
host's free pool. There is no advance reservation; a future allocation
competes at activation time and loses if the capacity is gone by then.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import journal
from .model import (
    CONSUMABLE_DIMS,
    CONSUMING_STATES,
    ClockWentBackwards,
    Command,
    HostNode,
    InvalidDuration,
    Launch,
    ResourceVector,
    ScheduleAllocation,
    StartInPast,
    Stop,
    VMDefinition,
    first_unfit_dimension,
)


class Clock:
    def now(self) -> float:
        raise NotImplementedError


class WallClock(Clock):
    def now(self) -> float:
        return time.time()


class SimClock(Clock):
    """Manually advanced clock; never moves backwards."""

    def __init__(self, start: float = 0.0):
        self._t = start

    def now(self) -> float:
        return self._t

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ClockWentBackwards("advance must be non-negative")
        self._t += dt
        return self._t

    def set(self, t: float) -> float:
        if t < self._t:
            raise ClockWentBackwards(f"cannot move from {self._t} back to {t}")
        self._t = t
        return self._t


@dataclass(frozen=True)
class Admission:
    granted: bool
    dimension: Optional[str] = None  # first insufficient dimension when denied


class AllocationState(str, Enum):
    WAITING = "WAITING"
    ACTIVE = "ACTIVE"
    COMPLETED = "COMPLETED"
    CANCELLED = "CANCELLED"


@dataclass
class ScheduledAllocation:
    alloc_id: int
    definition: VMDefinition
    start_time: float
    duration_s: int
    state: AllocationState = AllocationState.WAITING
    parent: Optional[str] = None
    owner: Optional[str] = None
    cancel_reason: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "alloc_id": self.alloc_id,
            "definition": self.definition.to_dict(),
            "start_time": self.start_time,
            "duration_s": self.duration_s,
            "state": self.state.value,
            "parent": self.parent,
            "owner": self.owner,
            "cancel_reason": self.cancel_reason,
        }


def free_capacity(host: HostNode) -> ResourceVector:
    """Capacity minus everything charged to the host: guests in a consuming
    state and every block volume's full size. cpu_priority reports the
    host's own weight since priorities are not consumable."""
    cores = host.capacity.cpu_cores
    ram = host.capacity.ram_mib
    disk = host.capacity.disk_gib
    nics = host.capacity.nics
    for child in host.children.values():
        if child.state in CONSUMING_STATES:
            r = child.definition.resources
            cores -= r.cpu_cores
            ram -= r.ram_mib
            disk -= r.disk_gib
            nics -= r.nics
    for vol in host.volumes.values():
        disk -= vol.size_gib
    return ResourceVector(
        cpu_cores=cores,
        cpu_priority=host.capacity.cpu_priority,
        ram_mib=ram,
        disk_gib=disk,
        nics=nics,
    )


def admit(host: HostNode, request: ResourceVector) -> Admission:
    """Grant iff the request fits the host's current free pool. Denials name
    the first insufficient dimension in the fixed order cores, ram, disk,
    nics. Callers commit the reservation under the same plane lock that
    served the check, so a grant cannot be invalidated concurrently."""
    dim = first_unfit_dimension(request, free_capacity(host))
    if dim is None:
        return Admission(granted=True)
    return Admission(granted=False, dimension=dim)


class Scheduler:
    """Holds future allocations and turns clock ticks into queue commands.

    tick() emits a Launch for every allocation whose start has arrived and a
    Stop for every active one whose window has elapsed. Commands carry keys
    derived from (allocation id, phase), so a repeated or replayed tick
    cannot double-fire.
    """

    def __init__(self, clock: Clock, journal_path: Optional[str] = None, fsync: bool = True):
        self.clock = clock
        self._lock = threading.Lock()
        self.allocations: dict[int, ScheduledAllocation] = {}
        self._order: list[int] = []
        self._next_id = 1
        self._last_tick: Optional[float] = None
        self._writer: Optional[journal.JournalWriter] = None
        if journal_path is not None:
            records, corrupt_offset = journal.read_records(journal_path)
            for kind, payload in records:
                if kind != journal.KIND_ALLOCATION:
                    continue
                self._replay(json.loads(payload.decode("utf-8")))
            self._writer = journal.JournalWriter(journal_path, fsync=fsync)
            if corrupt_offset is not None:
                self._writer.truncate_to(corrupt_offset)

    def _replay(self, body: dict) -> None:
        event = body["event"]
        if event == "scheduled":
            d = body["alloc"]
            alloc = ScheduledAllocation(
                alloc_id=d["alloc_id"],
                definition=VMDefinition.from_dict(d["definition"]),
                start_time=d["start_time"],
                duration_s=d["duration_s"],
                state=AllocationState(d["state"]),
                parent=d.get("parent"),
                owner=d.get("owner"),
            )
            self.allocations[alloc.alloc_id] = alloc
            self._order.append(alloc.alloc_id)
            self._next_id = max(self._next_id, alloc.alloc_id + 1)
        else:
            alloc = self.allocations.get(body["alloc_id"])
            if alloc is None:
                return
            if event == "activated":
                alloc.state = AllocationState.ACTIVE
            elif event == "completed":
                alloc.state = AllocationState.COMPLETED
            elif event == "cancelled":
                alloc.state = AllocationState.CANCELLED
                alloc.cancel_reason = body.get("reason")

    def _journal(self, body: dict) -> None:
        if self._writer is not None:
            self._writer.append(
                journal.KIND_ALLOCATION,
                json.dumps(body, separators=(",", ":")).encode("utf-8"),
            )

    def schedule_future(
        self,
        definition: VMDefinition,
        start_time: float,
        duration_s: int,
        parent: Optional[str] = None,
        owner: Optional[str] = None,
    ) -> ScheduledAllocation:
        definition.validate()
        if start_time < self.clock.now():
            raise StartInPast(f"start {start_time} is before now {self.clock.now()}")
        if duration_s <= 0:
            raise InvalidDuration("duration must be positive")
        with self._lock:
            alloc = ScheduledAllocation(
                alloc_id=self._next_id,
                definition=definition,
                start_time=start_time,
                duration_s=duration_s,
                parent=parent,
                owner=owner,
            )
            self._next_id += 1
            self.allocations[alloc.alloc_id] = alloc
            self._order.append(alloc.alloc_id)
            self._journal({"event": "scheduled", "alloc": alloc.to_dict()})
            return alloc

    def tick(self, now: Optional[float] = None) -> list[tuple[Command, str]]:
        """Advance allocation phases to `now`. Returns the commands to
        enqueue, each paired with its idempotency key. Activations fire
        before expiries so an already-elapsed allocation still launches and
        stops in order within a single tick."""
        if now is None:
            now = self.clock.now()
        with self._lock:
            if self._last_tick is not None and now < self._last_tick:
                raise ClockWentBackwards(
                    f"tick at {now} after tick at {self._last_tick}"
                )
            self._last_tick = now
            emitted: list[tuple[Command, str]] = []
            # activation phase: FIFO by scheduling order decides who wins a
            # same-tick race for the last slot
            for alloc_id in self._order:
                alloc = self.allocations[alloc_id]
                if alloc.state is AllocationState.WAITING and alloc.start_time <= now:
                    alloc.state = AllocationState.ACTIVE
                    self._journal({"event": "activated", "alloc_id": alloc_id})
                    emitted.append(
                        (
                            Launch(
                                definition=alloc.definition,
                                parent=alloc.parent,
                                owner=alloc.owner,
                            ),
                            f"alloc-{alloc_id}:launch",
                        )
                    )
            # expiry phase
            for alloc_id in self._order:
                alloc = self.allocations[alloc_id]
                if (
                    alloc.state is AllocationState.ACTIVE
                    and alloc.start_time + alloc.duration_s <= now
                ):
                    alloc.state = AllocationState.COMPLETED
                    self._journal({"event": "completed", "alloc_id": alloc_id})
                    emitted.append(
                        (Stop(uuid=alloc.definition.uuid), f"alloc-{alloc_id}:stop")
                    )
            return emitted

    def report_launch_result(self, alloc_id: int, ok: bool, reason: Optional[str] = None) -> None:
        """Feedback from the worker that executed an activation's Launch.
        Denied admission turns the allocation into CANCELLED with the losing
        dimension recorded for the operator."""
        with self._lock:
            alloc = self.allocations.get(alloc_id)
            if alloc is None or alloc.state is not AllocationState.ACTIVE:
                return
            if not ok:
                alloc.state = AllocationState.CANCELLED
                alloc.cancel_reason = reason
                self._journal(
                    {"event": "cancelled", "alloc_id": alloc_id, "reason": reason}
                )

    def list_allocations(self) -> list[ScheduledAllocation]:
        with self._lock:
            return [self.allocations[i] for i in self._order]

    def close(self) -> None:
        with self._lock:
            if self._writer is not None:
                self._writer.close()
                self._writer = None
