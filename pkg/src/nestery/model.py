"""Core domain model shared by every other module.

Defines the five-dimensional resource vector, VM definitions and their
canonical single-line XML document form, VM lifecycle records, host nodes,
and the command vocabulary that travels through the task queue.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union
from xml.etree import ElementTree
from xml.sax.saxutils import escape


# ---------------------------------------------------------------------------
# errors
#
# Every domain error carries a stable `code` used verbatim on the wire and a
# default HTTP status so the gateway can map exceptions mechanically.


class NesteryError(Exception):
    code = "error"
    http_status = 400

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.code)
        self.detail = detail or self.code


class MalformedDocument(NesteryError):
    code = "malformed_document"
    http_status = 422


class InvariantViolation(NesteryError):
    code = "invariant_violation"
    http_status = 422

    def __init__(self, violated_field: str, detail: str = ""):
        super().__init__(detail or f"invariant violated on {violated_field}")
        self.field = violated_field


class AdmissionDenied(NesteryError):
    code = "admission_denied"
    http_status = 409

    def __init__(self, dimension: str, detail: str = ""):
        super().__init__(detail or f"insufficient {dimension}")
        self.dimension = dimension


class DuplicateUuid(NesteryError):
    code = "duplicate_uuid"
    http_status = 409


class NestingDepthExceeded(NesteryError):
    code = "nesting_depth_exceeded"
    http_status = 422


class UnknownVm(NesteryError):
    code = "unknown_vm"
    http_status = 404


class IllegalState(NesteryError):
    code = "illegal_state"
    http_status = 409

    def __init__(self, current: str, detail: str = ""):
        super().__init__(detail or f"operation not legal in state {current}")
        self.current = current


class ShrinkBelowChildUsage(NesteryError):
    code = "shrink_below_child_usage"
    http_status = 409

    def __init__(self, dimension: str, detail: str = ""):
        super().__init__(detail or f"children and volumes still use {dimension}")
        self.dimension = dimension


class UnknownVolume(NesteryError):
    code = "unknown_volume"
    http_status = 404


class VolumeAttached(NesteryError):
    code = "volume_attached"
    http_status = 409


class ShrinkBelowUsed(NesteryError):
    code = "shrink_below_used"
    http_status = 409


class InsufficientSpace(NesteryError):
    code = "insufficient_space"
    http_status = 409


class InvalidSize(NesteryError):
    code = "invalid_size"
    http_status = 422


class StartInPast(NesteryError):
    code = "start_in_past"
    http_status = 422


class InvalidDuration(NesteryError):
    code = "invalid_duration"
    http_status = 422


class ClockWentBackwards(NesteryError):
    code = "clock_went_backwards"
    http_status = 409


class UnknownMessage(NesteryError):
    code = "unknown_message"
    http_status = 404


class StorageFailure(NesteryError):
    code = "storage_failure"
    http_status = 503


class CorruptJournal(NesteryError):
    code = "corrupt_journal"
    http_status = 500

    def __init__(self, offset: int, detail: str = ""):
        super().__init__(detail or f"journal corrupt at byte {offset}")
        self.offset = offset


class NotAProvider(NesteryError):
    code = "not_a_provider"
    http_status = 409


class SpecExceedsFreeCapacity(NesteryError):
    code = "spec_exceeds_free_capacity"
    http_status = 409


class InvalidPriceBand(NesteryError):
    code = "invalid_price_band"
    http_status = 422


class UnknownOffer(NesteryError):
    code = "unknown_offer"
    http_status = 404


class UnknownContract(NesteryError):
    code = "unknown_contract"
    http_status = 404


class CapacityGone(NesteryError):
    code = "capacity_gone"
    http_status = 409


class NotYourContract(NesteryError):
    code = "not_your_contract"
    http_status = 403


class ContractNotActive(NesteryError):
    code = "contract_not_active"
    http_status = 409


class IncompleteProfile(NesteryError):
    code = "incomplete_profile"
    http_status = 422

    def __init__(self, missing_field: str, detail: str = ""):
        super().__init__(detail or f"profile missing {missing_field}")
        self.field = missing_field


class NoBackingCloud(NesteryError):
    code = "no_backing_cloud"
    http_status = 409


class UnknownUser(NesteryError):
    code = "unknown_user"
    http_status = 404


class EmptySampleSet(NesteryError):
    code = "empty_sample_set"
    http_status = 422


class ZeroBaseline(NesteryError):
    code = "zero_baseline"
    http_status = 422


class CalibrationFailed(NesteryError):
    code = "calibration_failed"
    http_status = 500

    def __init__(self, best_residual: float, detail: str = ""):
        super().__init__(detail or f"best residual {best_residual:.4f} outside tolerance")
        self.best_residual = best_residual


class BindFailure(NesteryError):
    code = "bind_failure"
    http_status = 500


def error_status(code: str) -> int:
    """HTTP status for a wire-level error code, for errors relayed as data."""

    def walk(cls):
        for sub in cls.__subclasses__():
            yield sub
            yield from walk(sub)

    for cls in walk(NesteryError):
        if cls.code == code:
            return cls.http_status
    return 400


def relayed_error(code: str, detail: str) -> NesteryError:
    """Rebuild an exception from a command result that crossed the queue."""
    exc = NesteryError(detail or code)
    exc.code = code
    exc.http_status = error_status(code)
    return exc


# ---------------------------------------------------------------------------
# resource vectors

# Consumable dimensions in fixed order; admission denials always report the
# first insufficient one in this order. cpu_priority is deliberately absent:
# it is a contention weight, not something a guest uses up.
CONSUMABLE_DIMS = (
    ("cores", "cpu_cores"),
    ("ram", "ram_mib"),
    ("disk", "disk_gib"),
    ("nics", "nics"),
)


@dataclass(frozen=True)
class ResourceVector:
    """Size of one allocation along the five schedulable dimensions.

    Bounds (checked by validate(), not on construction, so that capacity
    arithmetic may produce zero-valued free vectors): cpu_cores >= 1,
    cpu_priority in [1, 1024], ram_mib >= 64, disk_gib >= 0, nics >= 0.
    """

    cpu_cores: int
    cpu_priority: int
    ram_mib: int
    disk_gib: int
    nics: int

    def validate(self) -> "ResourceVector":
        for name in ("cpu_cores", "cpu_priority", "ram_mib", "disk_gib", "nics"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise InvariantViolation(name, f"{name} must be an integer")
        if self.cpu_cores < 1:
            raise InvariantViolation("cpu_cores", "cpu_cores must be >= 1")
        if not 1 <= self.cpu_priority <= 1024:
            raise InvariantViolation("cpu_priority", "cpu_priority must be in [1, 1024]")
        if self.ram_mib < 64:
            raise InvariantViolation("ram_mib", "ram_mib must be >= 64")
        if self.disk_gib < 0:
            raise InvariantViolation("disk_gib", "disk_gib must be >= 0")
        if self.nics < 0:
            raise InvariantViolation("nics", "nics must be >= 0")
        return self

    def to_dict(self) -> dict:
        return {
            "cores": self.cpu_cores,
            "priority": self.cpu_priority,
            "ram_mib": self.ram_mib,
            "disk_gib": self.disk_gib,
            "nics": self.nics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResourceVector":
        try:
            return cls(
                cpu_cores=int(d["cores"]),
                cpu_priority=int(d["priority"]),
                ram_mib=int(d["ram_mib"]),
                disk_gib=int(d["disk_gib"]),
                nics=int(d["nics"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad resource vector: {exc}")


def vector_fits(request: ResourceVector, free: ResourceVector) -> bool:
    """Partial order on consumables only: every consumable of `request`
    must fit inside `free`. Priorities never participate."""
    return first_unfit_dimension(request, free) is None


def first_unfit_dimension(request: ResourceVector, free: ResourceVector) -> Optional[str]:
    for dim, attr in CONSUMABLE_DIMS:
        if getattr(request, attr) > getattr(free, attr):
            return dim
    return None


# ---------------------------------------------------------------------------
# VM definitions and the canonical document

UUID_HEX_RE = re.compile(r"[0-9a-f]{32}\Z")
MAX_NAME_LEN = 128
MAX_NESTING_LEVEL = 2


@dataclass(frozen=True)
class VMDefinition:
    """What the user asked for: identity, sizing and image of one guest.

    level 1 lives on the physical host, level 2 inside a level-1 guest.
    The physical host itself is never described by a definition.
    """

    uuid: str
    name: str
    resources: ResourceVector
    image_ref: str
    level: int

    def validate(self) -> "VMDefinition":
        if not isinstance(self.uuid, str) or not UUID_HEX_RE.match(self.uuid):
            raise InvariantViolation("uuid", "uuid must be 32 lowercase hex digits")
        if not self.name or len(self.name) > MAX_NAME_LEN:
            raise InvariantViolation("name", "name must be 1..128 characters")
        if any(ord(c) < 0x20 or ord(c) == 0x7F for c in self.name):
            raise InvariantViolation("name", "name must not contain control characters")
        self.resources.validate()
        if self.level not in (1, 2):
            raise InvariantViolation("level", "level must be 1 or 2")
        return self

    def to_dict(self) -> dict:
        return {
            "uuid": self.uuid,
            "name": self.name,
            "resources": self.resources.to_dict(),
            "image_ref": self.image_ref,
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VMDefinition":
        try:
            return cls(
                uuid=str(d["uuid"]).lower(),
                name=str(d["name"]),
                resources=ResourceVector.from_dict(d["resources"]),
                image_ref=str(d["image_ref"]),
                level=int(d["level"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"bad definition: {exc}")


def _attr_escape(value: str) -> str:
    return escape(value, {'"': "&quot;"})


def serialize_definition(definition: VMDefinition) -> bytes:
    """Render the canonical definition document: single-line UTF-8 XML with
    fixed attribute order and no insignificant whitespace, so identical
    definitions are identical byte strings."""
    definition.validate()
    r = definition.resources
    doc = (
        f'<vm uuid="{definition.uuid}" level="{definition.level}">'
        f"<name>{escape(definition.name)}</name>"
        f'<resources cores="{r.cpu_cores}" priority="{r.cpu_priority}"'
        f' ram_mib="{r.ram_mib}" disk_gib="{r.disk_gib}" nics="{r.nics}"/>'
        f'<image ref="{_attr_escape(definition.image_ref)}"/>'
        f"</vm>"
    )
    return doc.encode("utf-8")


def _int_attr(attrs: dict, key: str) -> int:
    if key not in attrs:
        raise MalformedDocument(f"missing attribute {key}")
    try:
        return int(attrs[key])
    except ValueError:
        raise MalformedDocument(f"attribute {key} is not an integer")


def parse_definition(data: bytes) -> VMDefinition:
    """Parse a definition document and enforce every field invariant.

    Structural problems raise MalformedDocument; well-formed documents whose
    values are out of bounds raise InvariantViolation naming the field.
    """
    try:
        root = ElementTree.fromstring(data.decode("utf-8"))
    except (UnicodeDecodeError, ElementTree.ParseError) as exc:
        raise MalformedDocument(str(exc))
    if root.tag != "vm":
        raise MalformedDocument(f"root element is <{root.tag}>, expected <vm>")
    name_el = root.find("name")
    res_el = root.find("resources")
    img_el = root.find("image")
    if name_el is None or res_el is None or img_el is None:
        raise MalformedDocument("document must contain <name>, <resources> and <image>")
    if "uuid" not in root.attrib:
        raise MalformedDocument("missing attribute uuid")
    if img_el.get("ref") is None:
        raise MalformedDocument("missing attribute ref on <image>")
    resources = ResourceVector(
        cpu_cores=_int_attr(res_el.attrib, "cores"),
        cpu_priority=_int_attr(res_el.attrib, "priority"),
        ram_mib=_int_attr(res_el.attrib, "ram_mib"),
        disk_gib=_int_attr(res_el.attrib, "disk_gib"),
        nics=_int_attr(res_el.attrib, "nics"),
    )
    definition = VMDefinition(
        uuid=str(root.get("uuid")).lower(),
        name=name_el.text or "",
        resources=resources,
        image_ref=img_el.get("ref"),
        level=_int_attr(root.attrib, "level"),
    )
    return definition.validate()


# ---------------------------------------------------------------------------
# VM lifecycle

class VMState(str, Enum):
    DEFINED = "DEFINED"
    SCHEDULED = "SCHEDULED"
    RUNNING = "RUNNING"
    STOPPED = "STOPPED"
    FAILED = "FAILED"


LEGAL_TRANSITIONS = {
    VMState.DEFINED: frozenset({VMState.SCHEDULED, VMState.RUNNING}),
    VMState.SCHEDULED: frozenset({VMState.RUNNING, VMState.STOPPED}),
    # RUNNING -> RUNNING is the rescale edge.
    VMState.RUNNING: frozenset({VMState.RUNNING, VMState.STOPPED, VMState.FAILED}),
    VMState.STOPPED: frozenset({VMState.RUNNING}),
    VMState.FAILED: frozenset(),
}

# States whose resources are charged against the parent host.
CONSUMING_STATES = frozenset({VMState.SCHEDULED, VMState.RUNNING})


@dataclass
class VMRecord:
    """Lifecycle of one defined guest. Mutated only under the plane lock."""

    definition: VMDefinition
    state: VMState = VMState.DEFINED
    parent: Optional[str] = None  # node_id of the hosting HostNode
    started_at: Optional[float] = None
    stopped_at: Optional[float] = None

    @property
    def uuid(self) -> str:
        return self.definition.uuid

    @property
    def level(self) -> int:
        return self.definition.level

    def transition(self, new: VMState) -> None:
        """Apply one edge of the lifecycle graph; reject anything else and
        leave the record untouched."""
        if new not in LEGAL_TRANSITIONS[self.state]:
            raise IllegalState(
                self.state.value, f"no transition {self.state.value} -> {new.value}"
            )
        self.state = new


class HostNode:
    """A machine that can run guests: the physical node (level 0) or a
    RUNNING level-1 guest acting as a nested host. A nested host's node_id
    is its backing VM's uuid."""

    def __init__(self, node_id: str, level: int, capacity: ResourceVector):
        self.node_id = node_id
        self.level = level
        self.capacity = capacity
        self.children: dict[str, VMRecord] = {}
        self.volumes: dict = {}  # volume_id -> BlockVolume
        # canonical definition bytes for every guest ever defined here
        self.definition_store: dict[str, bytes] = {}


# ---------------------------------------------------------------------------
# commands

@dataclass(frozen=True)
class Launch:
    definition: VMDefinition
    parent: Optional[str] = None  # host node id; required for level 2
    owner: Optional[str] = None


@dataclass(frozen=True)
class Start:
    uuid: str


@dataclass(frozen=True)
class Stop:
    uuid: str


@dataclass(frozen=True)
class Rescale:
    uuid: str
    resources: ResourceVector


@dataclass(frozen=True)
class ScheduleAllocation:
    definition: VMDefinition
    start_time: float
    duration_s: int
    parent: Optional[str] = None
    owner: Optional[str] = None


@dataclass(frozen=True)
class Status:
    pass


@dataclass(frozen=True)
class VolumeCreate:
    size_gib: int
    host: Optional[str] = None


@dataclass(frozen=True)
class VolumeResize:
    volume_id: str
    size_gib: int


@dataclass(frozen=True)
class VolumeDelete:
    volume_id: str


@dataclass(frozen=True)
class SnapshotCreate:
    vm_uuid: str
    volume_id: str


Command = Union[
    Launch,
    Start,
    Stop,
    Rescale,
    ScheduleAllocation,
    Status,
    VolumeCreate,
    VolumeResize,
    VolumeDelete,
    SnapshotCreate,
]


def command_to_dict(cmd: Command) -> dict:
    if isinstance(cmd, Launch):
        return {"op": "launch", "definition": cmd.definition.to_dict(),
                "parent": cmd.parent, "owner": cmd.owner}
    if isinstance(cmd, Start):
        return {"op": "start", "uuid": cmd.uuid}
    if isinstance(cmd, Stop):
        return {"op": "stop", "uuid": cmd.uuid}
    if isinstance(cmd, Rescale):
        return {"op": "rescale", "uuid": cmd.uuid, "resources": cmd.resources.to_dict()}
    if isinstance(cmd, ScheduleAllocation):
        return {"op": "schedule", "definition": cmd.definition.to_dict(),
                "start_time": cmd.start_time, "duration_s": cmd.duration_s,
                "parent": cmd.parent, "owner": cmd.owner}
    if isinstance(cmd, Status):
        return {"op": "status"}
    if isinstance(cmd, VolumeCreate):
        return {"op": "volume_create", "size_gib": cmd.size_gib, "host": cmd.host}
    if isinstance(cmd, VolumeResize):
        return {"op": "volume_resize", "volume_id": cmd.volume_id, "size_gib": cmd.size_gib}
    if isinstance(cmd, VolumeDelete):
        return {"op": "volume_delete", "volume_id": cmd.volume_id}
    if isinstance(cmd, SnapshotCreate):
        return {"op": "snapshot_create", "vm_uuid": cmd.vm_uuid, "volume_id": cmd.volume_id}
    raise MalformedDocument(f"unknown command type {type(cmd).__name__}")


def command_from_dict(d: dict) -> Command:
    try:
        op = d["op"]
        if op == "launch":
            return Launch(definition=VMDefinition.from_dict(d["definition"]),
                          parent=d.get("parent"), owner=d.get("owner"))
        if op == "start":
            return Start(uuid=str(d["uuid"]))
        if op == "stop":
            return Stop(uuid=str(d["uuid"]))
        if op == "rescale":
            return Rescale(uuid=str(d["uuid"]),
                           resources=ResourceVector.from_dict(d["resources"]))
        if op == "schedule":
            return ScheduleAllocation(
                definition=VMDefinition.from_dict(d["definition"]),
                start_time=float(d["start_time"]),
                duration_s=int(d["duration_s"]),
                parent=d.get("parent"), owner=d.get("owner"))
        if op == "status":
            return Status()
        if op == "volume_create":
            return VolumeCreate(size_gib=int(d["size_gib"]), host=d.get("host"))
        if op == "volume_resize":
            return VolumeResize(volume_id=str(d["volume_id"]), size_gib=int(d["size_gib"]))
        if op == "volume_delete":
            return VolumeDelete(volume_id=str(d["volume_id"]))
        if op == "snapshot_create":
            return SnapshotCreate(vm_uuid=str(d["vm_uuid"]), volume_id=str(d["volume_id"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDocument(f"bad command: {exc}")
    raise MalformedDocument(f"unknown op {d.get('op')!r}")
