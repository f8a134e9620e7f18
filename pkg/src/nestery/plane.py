"""Control plane wiring: one queue, one scheduler, one machine park.

Commands enter through submit(), travel the durable queue, and are executed
by the worker under idempotency keys. Reopening a data directory rebuilds
the whole machine state by replaying applied effects in their original
order, so a crash between any two journal writes is survivable.
"""

from __future__ import annotations

import json
import os
import uuid as uuidlib
from typing import Optional

from . import scheduler as sched
from .blockstore import BlockStore
from .hypersim import CommandResult, Hypervisor, Worker
from .market import Market
from .model import (
    Command,
    ResourceVector,
    ScheduleAllocation,
    StorageFailure,
)
from .perfbench import OverheadModel
from .taskqueue import EffectRegistry, TaskQueue


class _ReplayClock:
    """Freely settable time source for effect replay; unlike SimClock it may
    move backwards, because redelivered commands can apply out of enqueue
    order."""

    def __init__(self):
        self.t = 0.0

    def now(self) -> float:
        return self.t


class ControlPlane:
    def __init__(
        self,
        data_dir: str,
        clock: Optional[sched.Clock] = None,
        fsync: bool = True,
        overhead: Optional[OverheadModel] = None,
    ):
        os.makedirs(data_dir, exist_ok=True)
        self.data_dir = data_dir
        self.clock = clock or sched.WallClock()
        self.hypervisor = Hypervisor(self.clock, overhead)
        self.scheduler = sched.Scheduler(
            self.clock, os.path.join(data_dir, "allocations.log"), fsync=fsync
        )
        self.queue = TaskQueue(
            os.path.join(data_dir, "queue.log"), now=self.clock.now, fsync=fsync
        )
        self.registry = EffectRegistry(os.path.join(data_dir, "effects.log"), fsync=fsync)
        self.blockstore = BlockStore(self.hypervisor)
        self.market = Market(self, path=os.path.join(data_dir, "market.json"))
        self.results: dict[int, CommandResult] = {}
        self.worker = Worker(
            "w0",
            self.hypervisor,
            self.blockstore,
            self.scheduler,
            self.queue,
            self.registry,
        )
        self._hosts_path = os.path.join(data_dir, "hosts.json")
        self._load_hosts()
        self._replay_effects()
        self.market.load()

    # -- persistence -----------------------------------------------------------

    def _load_hosts(self) -> None:
        if not os.path.exists(self._hosts_path):
            return
        with open(self._hosts_path) as fh:
            doc = json.load(fh)
        for entry in doc.get("hosts", []):
            self.hypervisor.add_physical_host(
                entry["node_id"], ResourceVector.from_dict(entry["capacity"])
            )

    def init_host(self, node_id: str, capacity: ResourceVector):
        host = self.hypervisor.add_physical_host(node_id, capacity)
        doc = {
            "hosts": [
                {"node_id": h.node_id, "capacity": h.capacity.to_dict()}
                for h in self.hypervisor.physical_hosts()
            ]
        }
        with open(self._hosts_path, "w") as fh:
            json.dump(doc, fh)
        return host

    def _replay_effects(self) -> None:
        """Re-execute every applied effect in application order against the
        fresh machine model. Scheduled allocations are skipped because the
        scheduler replays its own journal. Each command re-executes at its
        original enqueue instant so time-derived state (uptimes, snapshot
        stamps) rebuilds to the same values it had before the reopen."""
        by_key = {}
        for msg in self.queue._messages.values():
            by_key.setdefault(msg.idempotency_key, msg)
        replay_clock = _ReplayClock()
        saved_clock = self.hypervisor.clock
        self.hypervisor.clock = replay_clock
        try:
            for key in self.registry.keys():
                msg = by_key.get(key)
                if msg is None or isinstance(msg.command, ScheduleAllocation):
                    continue
                replay_clock.t = msg.enqueued_at
                try:
                    self.worker._dispatch(msg.command)
                except Exception:
                    # the original application already recorded this command's
                    # outcome; a replay that errors the same way needs no action
                    pass
        finally:
            self.hypervisor.clock = saved_clock

    # -- command flow ------------------------------------------------------------

    def submit(self, command: Command, idempotency_key: Optional[str] = None) -> int:
        key = idempotency_key or f"auto-{uuidlib.uuid4().hex}"
        return self.queue.enqueue(command, key)

    def drain(self, visibility_timeout_s: float = 30.0) -> int:
        """Process every deliverable message. Returns how many were handled."""
        handled = 0
        while True:
            msg = self.queue.receive(self.worker.worker_id, visibility_timeout_s)
            if msg is None:
                return handled
            result = self.worker.handle(msg)
            self.results[msg.msg_id] = result
            handled += 1

    def submit_and_run(self, command: Command, idempotency_key: Optional[str] = None) -> CommandResult:
        msg_id = self.submit(command, idempotency_key)
        self.drain()
        result = self.results.get(msg_id)
        if result is None:
            raise StorageFailure("command was not processed")
        return result

    # -- time ---------------------------------------------------------------------

    def tick(self, now: Optional[float] = None) -> int:
        """Fire due allocation phases into the queue and process them."""
        emitted = self.scheduler.tick(now if now is not None else self.clock.now())
        for command, key in emitted:
            self.submit(command, key)
        handled = self.drain()
        self.market.accrue(self.clock.now())
        return handled

    def advance(self, dt: float) -> float:
        """Simulated-clock convenience: move time forward, then tick."""
        if not isinstance(self.clock, sched.SimClock):
            raise StorageFailure("advance requires the simulated clock")
        t = self.clock.advance(dt)
        self.tick(t)
        return t

    # -- reporting ------------------------------------------------------------------

    def status(self) -> dict:
        doc = self.hypervisor.status()
        doc["allocations"] = [a.to_dict() for a in self.scheduler.list_allocations()]
        doc["queue"] = self.queue.stats()
        return doc

    def close(self) -> None:
        self.queue.close()
        self.registry.close()
        self.scheduler.close()
