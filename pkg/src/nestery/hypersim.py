"""In-memory machine park: hosts, guests, and the worker loop.

Models one physical host plus its nested guests. A level-1 guest that is
RUNNING doubles as a host node for level-2 guests; nesting stops there.
All mutation happens under one lock shared with the scheduler, which makes
admission check-and-commit atomic without distributed coordination.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Optional

from . import scheduler as sched
from . import taskqueue
from .model import (
    CONSUMABLE_DIMS,
    CONSUMING_STATES,
    AdmissionDenied,
    Command,
    DuplicateUuid,
    HostNode,
    IllegalState,
    InvariantViolation,
    Launch,
    MAX_NESTING_LEVEL,
    NesteryError,
    NestingDepthExceeded,
    Rescale,
    ResourceVector,
    ScheduleAllocation,
    ShrinkBelowChildUsage,
    Start,
    Status,
    Stop,
    StorageFailure,
    UnknownVm,
    VMDefinition,
    VMRecord,
    VMState,
    VolumeCreate,
    VolumeDelete,
    VolumeResize,
    SnapshotCreate,
    serialize_definition,
    vector_fits,
)
from .perfbench import OverheadModel

BASE_BOOT_LATENCY_MS = 500.0


@dataclass
class SimMachine:
    """Simulation metadata for one running guest."""

    record: VMRecord
    effective_service_factor: float
    boot_latency_ms: float


@dataclass
class CommandResult:
    ok: bool
    error: Optional[str] = None
    detail: Optional[str] = None
    data: Optional[dict] = None

    def to_dict(self) -> dict:
        return {"ok": self.ok, "error": self.error, "detail": self.detail, "data": self.data}

    @classmethod
    def from_dict(cls, d: dict) -> "CommandResult":
        return cls(ok=d["ok"], error=d.get("error"), detail=d.get("detail"), data=d.get("data"))


class Hypervisor:
    """Owns every host node and VM record. Level-1 guests get a HostNode of
    their own (same id as the VM uuid) the moment they run."""

    def __init__(self, clock: sched.Clock, overhead: Optional[OverheadModel] = None):
        self.clock = clock
        self.overhead = overhead or OverheadModel()
        self.lock = threading.RLock()
        self.hosts: dict[str, HostNode] = {}
        self.vms: dict[str, VMRecord] = {}
        self.machines: dict[str, SimMachine] = {}
        self.owners: dict[str, str] = {}

    # -- host bootstrap ------------------------------------------------------

    def add_physical_host(self, node_id: str, capacity: ResourceVector) -> HostNode:
        capacity.validate()
        with self.lock:
            if node_id in self.hosts:
                raise DuplicateUuid(f"host {node_id} already exists")
            host = HostNode(node_id=node_id, level=0, capacity=capacity)
            self.hosts[node_id] = host
            return host

    def physical_hosts(self) -> list[HostNode]:
        return [h for h in self.hosts.values() if h.level == 0]

    # -- helpers --------------------------------------------------------------

    def _host(self, node_id: str) -> HostNode:
        host = self.hosts.get(node_id)
        if host is None:
            raise UnknownVm(f"no host node {node_id}")
        return host

    def _record(self, uuid: str) -> VMRecord:
        rec = self.vms.get(uuid)
        if rec is None:
            raise UnknownVm(f"no vm {uuid}")
        return rec

    def _resolve_parent(self, definition: VMDefinition, parent: Optional[str]) -> HostNode:
        if parent is None:
            if definition.level == 1:
                physical = self.physical_hosts()
                if len(physical) == 1:
                    return physical[0]
                raise InvariantViolation(
                    "parent", "level-1 launch needs an explicit host when there is not exactly one physical node"
                )
            raise InvariantViolation("parent", "level-2 launch must name its level-1 parent")
        host = self._host(parent)
        if host.level != definition.level - 1:
            raise InvariantViolation(
                "parent",
                f"level-{definition.level} guest cannot run on level-{host.level} node",
            )
        return host

    def _boot_latency_ms(self, level: int) -> float:
        if level <= 1:
            return BASE_BOOT_LATENCY_MS
        return BASE_BOOT_LATENCY_MS * self.overhead.factor(level)

    # -- operations ------------------------------------------------------------

    def launch_vm(
        self,
        definition: VMDefinition,
        parent: Optional[str] = None,
        owner: Optional[str] = None,
    ) -> VMRecord:
        if definition.level > MAX_NESTING_LEVEL:
            raise NestingDepthExceeded(
                f"level {definition.level} exceeds the nesting cap of {MAX_NESTING_LEVEL}"
            )
        definition.validate()
        if not definition.image_ref:
            raise InvariantViolation("image_ref", "image reference must be non-empty")
        with self.lock:
            if definition.uuid in self.vms:
                raise DuplicateUuid(f"uuid {definition.uuid} already defined")
            host = self._resolve_parent(definition, parent)
            if host.level == 1:
                host_record = self.vms.get(host.node_id)
                if host_record is not None and host_record.state is not VMState.RUNNING:
                    raise IllegalState(
                        host_record.state.value, "parent cloud VM is not running"
                    )
            admission = sched.admit(host, definition.resources)
            if not admission.granted:
                raise AdmissionDenied(admission.dimension)
            host.definition_store[definition.uuid] = serialize_definition(definition)
            record = VMRecord(definition=definition, parent=host.node_id)
            record.transition(VMState.RUNNING)
            record.started_at = self.clock.now()
            host.children[definition.uuid] = record
            self.vms[definition.uuid] = record
            self.machines[definition.uuid] = SimMachine(
                record=record,
                effective_service_factor=self.overhead.factor(definition.level),
                boot_latency_ms=self._boot_latency_ms(definition.level),
            )
            if owner is not None:
                self.owners[definition.uuid] = owner
            if definition.level == 1:
                self.hosts[definition.uuid] = HostNode(
                    node_id=definition.uuid, level=1, capacity=definition.resources
                )
            return record

    def start_vm(self, uuid: str) -> VMRecord:
        with self.lock:
            record = self._record(uuid)
            if record.state is not VMState.STOPPED:
                raise IllegalState(record.state.value, "only a STOPPED vm can start")
            host = self._host(record.parent)
            if host.level == 1:
                host_record = self.vms.get(host.node_id)
                if host_record is not None and host_record.state is not VMState.RUNNING:
                    raise IllegalState(
                        host_record.state.value, "parent cloud VM is not running"
                    )
            # resources were returned on stop, so they must win admission again
            admission = sched.admit(host, record.definition.resources)
            if not admission.granted:
                raise AdmissionDenied(admission.dimension)
            record.transition(VMState.RUNNING)
            record.started_at = self.clock.now()
            record.stopped_at = None
            return record

    def stop_vm(self, uuid: str) -> VMRecord:
        """Stop a guest; an L1 cloud stops its own guests first, so a child
        never outlives its host. Freed resources return to the parent pool
        immediately (free capacity is derived from states)."""
        with self.lock:
            record = self._record(uuid)
            if record.state not in (VMState.RUNNING, VMState.SCHEDULED):
                raise IllegalState(record.state.value, "vm is not running")
            nested = self.hosts.get(uuid)
            if nested is not None:
                for child in list(nested.children.values()):
                    if child.state in CONSUMING_STATES:
                        child.transition(VMState.STOPPED)
                        child.stopped_at = self.clock.now()
            record.transition(VMState.STOPPED)
            record.stopped_at = self.clock.now()
            return record

    def rescale_vm(self, uuid: str, resources: ResourceVector) -> VMRecord:
        """Grow or shrink a RUNNING guest in place. Growth needs the parent's
        free pool to cover the delta; a cloud VM cannot shrink below what its
        own guests and volumes still use. All-or-nothing."""
        resources.validate()
        with self.lock:
            record = self._record(uuid)
            if record.state is not VMState.RUNNING:
                raise IllegalState(record.state.value, "only a RUNNING vm can rescale")
            host = self._host(record.parent)
            current = record.definition.resources
            free = sched.free_capacity(host)
            for dim, attr in CONSUMABLE_DIMS:
                want = getattr(resources, attr)
                have = getattr(current, attr) + getattr(free, attr)
                if want > have:
                    raise AdmissionDenied(dim)
            nested = self.hosts.get(uuid)
            if nested is not None:
                used = self._nested_usage(nested)
                for dim, attr in CONSUMABLE_DIMS:
                    if getattr(resources, attr) < used[dim]:
                        raise ShrinkBelowChildUsage(dim)
            new_definition = replace(record.definition, resources=resources)
            record.definition = new_definition
            host.definition_store[uuid] = serialize_definition(new_definition)
            if nested is not None:
                nested.capacity = resources
            machine = self.machines.get(uuid)
            if machine is not None:
                machine.record = record
            record.transition(VMState.RUNNING)  # the rescale self-edge
            return record

    def _nested_usage(self, nested: HostNode) -> dict[str, int]:
        used = {dim: 0 for dim, _ in CONSUMABLE_DIMS}
        for child in nested.children.values():
            if child.state in CONSUMING_STATES:
                for dim, attr in CONSUMABLE_DIMS:
                    used[dim] += getattr(child.definition.resources, attr)
        for vol in nested.volumes.values():
            used["disk"] += vol.size_gib
        return used

    def fail_vm(self, uuid: str) -> VMRecord:
        with self.lock:
            record = self._record(uuid)
            record.transition(VMState.FAILED)
            record.stopped_at = self.clock.now()
            return record

    # -- reporting ---------------------------------------------------------------

    def status(self) -> dict:
        """Full tree: per host its capacity and free vector, per guest its
        state, resources and uptime, volumes included. Deterministic order."""
        with self.lock:
            now = self.clock.now()
            return {
                "now": now,
                "hosts": [
                    self._host_entry(h, now)
                    for h in sorted(self.physical_hosts(), key=lambda h: h.node_id)
                ],
            }

    def _host_entry(self, host: HostNode, now: float) -> dict:
        return {
            "node_id": host.node_id,
            "level": host.level,
            "capacity": host.capacity.to_dict(),
            "free": sched.free_capacity(host).to_dict(),
            "vms": [self._vm_entry(r, now) for r in host.children.values()],
            "volumes": [v.to_dict() for v in host.volumes.values()],
        }

    def _vm_entry(self, record: VMRecord, now: float) -> dict:
        entry = {
            "uuid": record.uuid,
            "name": record.definition.name,
            "level": record.level,
            "state": record.state.value,
            "resources": record.definition.resources.to_dict(),
            "parent": record.parent,
            "uptime_s": (
                round(now - record.started_at, 6)
                if record.state is VMState.RUNNING and record.started_at is not None
                else 0.0
            ),
            "owner": self.owners.get(record.uuid),
        }
        nested = self.hosts.get(record.uuid)
        if nested is not None:
            entry["free"] = sched.free_capacity(nested).to_dict()
            entry["vms"] = [self._vm_entry(r, now) for r in nested.children.values()]
            entry["volumes"] = [v.to_dict() for v in nested.volumes.values()]
        return entry

    def check_conservation(self) -> None:
        """Assert the accounting identity on every host: capacity equals
        free plus child allocations plus volume sizes, per consumable."""
        with self.lock:
            for host in self.hosts.values():
                free = sched.free_capacity(host)
                for dim, attr in CONSUMABLE_DIMS:
                    total = getattr(free, attr)
                    for child in host.children.values():
                        if child.state in CONSUMING_STATES:
                            total += getattr(child.definition.resources, attr)
                    if attr == "disk_gib":
                        total += sum(v.size_gib for v in host.volumes.values())
                    cap = getattr(host.capacity, attr)
                    if total != cap:
                        raise InvariantViolation(
                            attr,
                            f"host {host.node_id}: {attr} books to {total}, capacity {cap}",
                        )
                for vol in host.volumes.values():
                    if vol.used_gib > vol.size_gib:
                        raise InvariantViolation(
                            "used_gib",
                            f"volume {vol.volume_id} uses {vol.used_gib} of {vol.size_gib}",
                        )


class Worker:
    """One satellite consumer: receives a command, executes it against the
    shared machine model exactly once per idempotency key, acks. Domain
    errors are permanent (acked with an error result); storage trouble is
    transient (left unacked for redelivery)."""

    def __init__(
        self,
        worker_id: str,
        hypervisor: Hypervisor,
        blockstore,
        scheduler: "sched.Scheduler",
        queue: taskqueue.TaskQueue,
        registry: taskqueue.EffectRegistry,
        host: Optional[HostNode] = None,
    ):
        self.worker_id = worker_id
        self.hypervisor = hypervisor
        self.blockstore = blockstore
        self.scheduler = scheduler
        self.queue = queue
        self.registry = registry
        self.host = host

    def handle(self, msg: taskqueue.QueueMessage) -> CommandResult:
        try:
            status, result_dict = taskqueue.dedupe_effect(
                self.registry, msg.idempotency_key, lambda: self._execute(msg.command).to_dict()
            )
        except StorageFailure:
            return CommandResult(ok=False, error="storage_failure", detail="transient; will retry")
        result = CommandResult.from_dict(result_dict)
        self._report_allocation(msg.idempotency_key, result)
        self.queue.ack(msg.msg_id)
        return result

    def _report_allocation(self, key: str, result: CommandResult) -> None:
        # activation launches carry keys of the form "alloc-<id>:launch"
        if key.startswith("alloc-") and key.endswith(":launch"):
            try:
                alloc_id = int(key[len("alloc-") : -len(":launch")])
            except ValueError:
                return
            self.scheduler.report_launch_result(
                alloc_id, result.ok, result.error if not result.ok else None
            )

    def _execute(self, cmd: Command) -> CommandResult:
        try:
            data = self._dispatch(cmd)
            return CommandResult(ok=True, data=data)
        except StorageFailure:
            raise
        except NesteryError as exc:
            return CommandResult(ok=False, error=exc.code, detail=exc.detail)

    def _dispatch(self, cmd: Command) -> dict:
        hv = self.hypervisor
        if isinstance(cmd, Launch):
            record = hv.launch_vm(cmd.definition, parent=cmd.parent, owner=cmd.owner)
            return {"uuid": record.uuid, "state": record.state.value}
        if isinstance(cmd, Start):
            record = hv.start_vm(cmd.uuid)
            return {"uuid": record.uuid, "state": record.state.value}
        if isinstance(cmd, Stop):
            record = hv.stop_vm(cmd.uuid)
            return {"uuid": record.uuid, "state": record.state.value}
        if isinstance(cmd, Rescale):
            record = hv.rescale_vm(cmd.uuid, cmd.resources)
            return {"uuid": record.uuid, "resources": record.definition.resources.to_dict()}
        if isinstance(cmd, ScheduleAllocation):
            alloc = self.scheduler.schedule_future(
                cmd.definition,
                cmd.start_time,
                cmd.duration_s,
                parent=cmd.parent,
                owner=cmd.owner,
            )
            return {"alloc_id": alloc.alloc_id, "state": alloc.state.value}
        if isinstance(cmd, Status):
            return hv.status()
        if isinstance(cmd, VolumeCreate):
            vol = self.blockstore.create_volume(cmd.size_gib, host=cmd.host)
            return vol.to_dict()
        if isinstance(cmd, VolumeResize):
            vol = self.blockstore.resize_volume(cmd.volume_id, cmd.size_gib)
            return vol.to_dict()
        if isinstance(cmd, VolumeDelete):
            self.blockstore.delete_volume(cmd.volume_id)
            return {"volume_id": cmd.volume_id, "deleted": True}
        if isinstance(cmd, SnapshotCreate):
            entry = self.blockstore.snapshot_instance(cmd.vm_uuid, cmd.volume_id)
            return entry.to_dict()
        raise InvariantViolation("command", f"unhandled command {type(cmd).__name__}")
