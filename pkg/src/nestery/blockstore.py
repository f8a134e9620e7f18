"""Host-local block volumes and instance snapshots.

Volume sizes are debited from the owning host's disk pool through the same
admission path as VM disk, so one conservation identity covers both: host
disk capacity equals free disk plus guest disk plus volume sizes, always.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import scheduler as sched
from .model import (
    AdmissionDenied,
    HostNode,
    InsufficientSpace,
    InvalidSize,
    InvariantViolation,
    ShrinkBelowUsed,
    UnknownVm,
    UnknownVolume,
    VolumeAttached,
)


@dataclass
class VolumeContent:
    name: str
    kind: str  # "data" or "snapshot"
    size_gib: int

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "size_gib": self.size_gib}


@dataclass
class BlockVolume:
    volume_id: str
    size_gib: int
    filesystem_label: str
    host: str
    used_gib: int = 0
    attached_to: Optional[str] = None
    contents: list[VolumeContent] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "volume_id": self.volume_id,
            "size_gib": self.size_gib,
            "used_gib": self.used_gib,
            "filesystem_label": self.filesystem_label,
            "host": self.host,
            "attached_to": self.attached_to,
            "contents": [c.to_dict() for c in self.contents],
        }


class BlockStore:
    """Volume operations over the hypervisor's hosts, serialized by the same
    lock that guards VM placement."""

    def __init__(self, hypervisor):
        self.hypervisor = hypervisor
        self._next_volume = 1
        self._next_snapshot = 1
        self._index: dict[str, str] = {}  # volume_id -> host node_id

    def _volume(self, volume_id: str) -> BlockVolume:
        host_id = self._index.get(volume_id)
        if host_id is None:
            raise UnknownVolume(f"no volume {volume_id}")
        return self.hypervisor.hosts[host_id].volumes[volume_id]

    def _resolve_host(self, host: Optional[str]) -> HostNode:
        if host is not None:
            node = self.hypervisor.hosts.get(host)
            if node is None:
                raise UnknownVm(f"no host node {host}")
            return node
        physical = self.hypervisor.physical_hosts()
        if len(physical) == 1:
            return physical[0]
        raise InvariantViolation(
            "host", "volume create needs an explicit host when there is not exactly one physical node"
        )

    def create_volume(self, size_gib: int, host: Optional[str] = None) -> BlockVolume:
        if not isinstance(size_gib, int) or isinstance(size_gib, bool) or size_gib < 1:
            raise InvalidSize("volume size must be a positive integer of GiB")
        with self.hypervisor.lock:
            node = self._resolve_host(host)
            if sched.free_capacity(node).disk_gib < size_gib:
                raise AdmissionDenied("disk")
            volume_id = f"vol-{self._next_volume}"
            self._next_volume += 1
            vol = BlockVolume(
                volume_id=volume_id,
                size_gib=size_gib,
                filesystem_label=f"ext4:{volume_id}",
                host=node.node_id,
            )
            node.volumes[volume_id] = vol
            self._index[volume_id] = node.node_id
            return vol

    def resize_volume(self, volume_id: str, new_size_gib: int) -> BlockVolume:
        if not isinstance(new_size_gib, int) or isinstance(new_size_gib, bool) or new_size_gib < 1:
            raise InvalidSize("volume size must be a positive integer of GiB")
        with self.hypervisor.lock:
            vol = self._volume(volume_id)
            node = self.hypervisor.hosts[vol.host]
            if new_size_gib < vol.used_gib:
                raise ShrinkBelowUsed(
                    f"volume holds {vol.used_gib} GiB, cannot shrink to {new_size_gib}"
                )
            growth = new_size_gib - vol.size_gib
            if growth > 0 and sched.free_capacity(node).disk_gib < growth:
                raise AdmissionDenied("disk")
            vol.size_gib = new_size_gib
            return vol

    def delete_volume(self, volume_id: str) -> None:
        with self.hypervisor.lock:
            vol = self._volume(volume_id)
            if vol.attached_to is not None:
                raise VolumeAttached(f"volume {volume_id} is attached to {vol.attached_to}")
            node = self.hypervisor.hosts[vol.host]
            del node.volumes[volume_id]
            del self._index[volume_id]

    def attach(self, volume_id: str, vm_uuid: str) -> BlockVolume:
        with self.hypervisor.lock:
            vol = self._volume(volume_id)
            if vm_uuid not in self.hypervisor.vms:
                raise UnknownVm(f"no vm {vm_uuid}")
            vol.attached_to = vm_uuid
            return vol

    def detach(self, volume_id: str) -> BlockVolume:
        with self.hypervisor.lock:
            vol = self._volume(volume_id)
            vol.attached_to = None
            return vol

    def snapshot_instance(self, vm_uuid: str, volume_id: str) -> VolumeContent:
        """Copy a guest's full disk allocation into a volume as one entry
        named after the guest and the moment it was taken. Fails whole when
        the volume's remaining space cannot hold it."""
        with self.hypervisor.lock:
            record = self.hypervisor.vms.get(vm_uuid)
            if record is None:
                raise UnknownVm(f"no vm {vm_uuid}")
            vol = self._volume(volume_id)
            snap_size = record.definition.resources.disk_gib
            if vol.used_gib + snap_size > vol.size_gib:
                raise InsufficientSpace(
                    f"snapshot needs {snap_size} GiB, volume has {vol.size_gib - vol.used_gib} free"
                )
            stamp = self.hypervisor.clock.now()
            entry = VolumeContent(
                name=f"{vm_uuid}@{stamp:.3f}#{self._next_snapshot}",
                kind="snapshot",
                size_gib=snap_size,
            )
            self._next_snapshot += 1
            vol.contents.append(entry)
            vol.used_gib += snap_size
            return entry

    def write_data(self, volume_id: str, name: str, size_gib: int) -> VolumeContent:
        """Plain data placement, used to exercise the used_gib accounting."""
        if size_gib < 0:
            raise InvalidSize("data size must be >= 0")
        with self.hypervisor.lock:
            vol = self._volume(volume_id)
            if vol.used_gib + size_gib > vol.size_gib:
                raise InsufficientSpace(f"no room for {size_gib} GiB in {volume_id}")
            entry = VolumeContent(name=name, kind="data", size_gib=size_gib)
            vol.contents.append(entry)
            vol.used_gib += size_gib
            return entry

    def list_volumes(self, host: Optional[str] = None) -> list[BlockVolume]:
        with self.hypervisor.lock:
            if host is not None:
                node = self.hypervisor.hosts.get(host)
                return list(node.volumes.values()) if node else []
            return [self._volume(v) for v in self._index]
