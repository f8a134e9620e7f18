"""Block volume accounting: sizes come out of the host disk pool, contents
come out of the volume, and neither side can go negative."""

import pytest

from nestery.model import (
    AdmissionDenied,
    InsufficientSpace,
    InvalidSize,
    InvariantViolation,
    Launch,
    ShrinkBelowUsed,
    SnapshotCreate,
    UnknownVm,
    UnknownVolume,
    VolumeAttached,
    VolumeCreate,
    VolumeDelete,
    VolumeResize,
)
from nestery.scheduler import free_capacity
from tests.conftest import make_definition


@pytest.fixture
def store(plane):
    return plane.blockstore


@pytest.mark.parametrize("bad", [0, -5, True, 1.5, "10"])
def test_create_rejects_bad_sizes(store, bad):
    with pytest.raises(InvalidSize):
        store.create_volume(bad)


def test_create_debits_host_disk(plane, store):
    vol = store.create_volume(100)
    assert vol.volume_id == "vol-1"
    assert vol.filesystem_label == "ext4:vol-1"
    assert vol.host == "host0"
    assert vol.used_gib == 0
    assert free_capacity(plane.hypervisor.hosts["host0"]).disk_gib == 900
    plane.hypervisor.check_conservation()


def test_create_beyond_free_disk_denied(plane, store):
    store.create_volume(900)
    with pytest.raises(AdmissionDenied) as err:
        store.create_volume(101)
    assert err.value.dimension == "disk"
    # exactly filling the pool is allowed
    store.create_volume(100)
    assert free_capacity(plane.hypervisor.hosts["host0"]).disk_gib == 0


def test_volume_ids_are_sequential(store):
    assert [store.create_volume(1).volume_id for _ in range(3)] == ["vol-1", "vol-2", "vol-3"]


def test_resize_grow_and_shrink(plane, store):
    vol = store.create_volume(100)
    store.write_data(vol.volume_id, "blob", 40)
    resized = store.resize_volume(vol.volume_id, 300)
    assert resized.size_gib == 300
    assert free_capacity(plane.hypervisor.hosts["host0"]).disk_gib == 700
    # shrink may not cut into stored bytes
    with pytest.raises(ShrinkBelowUsed):
        store.resize_volume(vol.volume_id, 39)
    assert store.resize_volume(vol.volume_id, 40).size_gib == 40
    plane.hypervisor.check_conservation()


def test_resize_beyond_free_disk_denied(plane, store):
    vol = store.create_volume(500)
    store.create_volume(400)
    with pytest.raises(AdmissionDenied):
        store.resize_volume(vol.volume_id, 601)
    assert vol.size_gib == 500


def test_resize_validates_size(store):
    vol = store.create_volume(10)
    with pytest.raises(InvalidSize):
        store.resize_volume(vol.volume_id, 0)


def test_unknown_volume(store):
    with pytest.raises(UnknownVolume):
        store.resize_volume("vol-99", 10)
    with pytest.raises(UnknownVolume):
        store.delete_volume("vol-99")


def test_delete_returns_disk(plane, store):
    vol = store.create_volume(250)
    store.delete_volume(vol.volume_id)
    assert free_capacity(plane.hypervisor.hosts["host0"]).disk_gib == 1000
    assert store.list_volumes() == []
    plane.hypervisor.check_conservation()


def test_attached_volume_cannot_be_deleted(plane, store):
    d = make_definition()
    plane.submit_and_run(Launch(definition=d))
    vol = store.create_volume(50)
    store.attach(vol.volume_id, d.uuid)
    assert vol.attached_to == d.uuid
    with pytest.raises(VolumeAttached):
        store.delete_volume(vol.volume_id)
    store.detach(vol.volume_id)
    assert vol.attached_to is None
    store.delete_volume(vol.volume_id)


def test_attach_requires_known_vm(store):
    vol = store.create_volume(10)
    with pytest.raises(UnknownVm):
        store.attach(vol.volume_id, "f" * 32)


def test_snapshot_copies_instance_disk(plane, store):
    d = make_definition(disk=30)
    plane.submit_and_run(Launch(definition=d))
    vol = store.create_volume(100)
    entry = store.snapshot_instance(d.uuid, vol.volume_id)
    assert entry.kind == "snapshot"
    assert entry.size_gib == 30
    assert entry.name == f"{d.uuid}@0.000#1"
    assert vol.used_gib == 30
    second = store.snapshot_instance(d.uuid, vol.volume_id)
    assert second.name.endswith("#2")
    assert vol.used_gib == 60
    plane.hypervisor.check_conservation()


def test_snapshot_needs_room(plane, store):
    d = make_definition(disk=30)
    plane.submit_and_run(Launch(definition=d))
    vol = store.create_volume(50)
    store.snapshot_instance(d.uuid, vol.volume_id)
    with pytest.raises(InsufficientSpace):
        store.snapshot_instance(d.uuid, vol.volume_id)
    # the failed attempt wrote nothing
    assert vol.used_gib == 30
    assert len(vol.contents) == 1


def test_snapshot_unknown_vm(store):
    vol = store.create_volume(10)
    with pytest.raises(UnknownVm):
        store.snapshot_instance("f" * 32, vol.volume_id)


def test_write_data_accounting(store):
    vol = store.create_volume(10)
    store.write_data(vol.volume_id, "a", 4)
    store.write_data(vol.volume_id, "b", 6)
    assert vol.used_gib == 10
    with pytest.raises(InsufficientSpace):
        store.write_data(vol.volume_id, "c", 1)
    with pytest.raises(InvalidSize):
        store.write_data(vol.volume_id, "d", -1)
    assert [c.name for c in vol.contents] == ["a", "b"]


def test_disk_conservation_with_vms_and_volumes(plane, store):
    plane.submit_and_run(Launch(definition=make_definition(disk=200)))
    store.create_volume(300)
    host = plane.hypervisor.hosts["host0"]
    assert free_capacity(host).disk_gib == 1000 - 200 - 300
    plane.hypervisor.check_conservation()


def test_volume_on_nested_host(plane, store):
    l1 = make_definition(cores=8, ram=8192, disk=200)
    plane.submit_and_run(Launch(definition=l1))
    vol = store.create_volume(120, host=l1.uuid)
    assert vol.host == l1.uuid
    # charged inside the cloud VM, not against the physical pool twice
    assert free_capacity(plane.hypervisor.hosts[l1.uuid]).disk_gib == 80
    assert free_capacity(plane.hypervisor.hosts["host0"]).disk_gib == 800
    # a nested guest's snapshot lands in the nested volume
    l2 = make_definition(level=2, disk=50)
    plane.submit_and_run(Launch(definition=l2, parent=l1.uuid))
    store.snapshot_instance(l2.uuid, vol.volume_id)
    assert vol.used_gib == 50
    plane.hypervisor.check_conservation()
    with pytest.raises(AdmissionDenied):
        store.create_volume(100, host=l1.uuid)


def test_volume_commands_route_through_queue(plane):
    r = plane.submit_and_run(VolumeCreate(size_gib=40))
    assert r.ok and r.data["volume_id"] == "vol-1"
    assert plane.submit_and_run(VolumeResize(volume_id="vol-1", size_gib=80)).data["size_gib"] == 80
    d = make_definition(disk=5)
    plane.submit_and_run(Launch(definition=d))
    snap = plane.submit_and_run(SnapshotCreate(vm_uuid=d.uuid, volume_id="vol-1"))
    assert snap.data["kind"] == "snapshot" and snap.data["size_gib"] == 5
    assert plane.submit_and_run(VolumeDelete(volume_id="vol-1")).data["deleted"] is True
    # domain error surfaces as a result, not an exception
    assert plane.submit_and_run(VolumeDelete(volume_id="vol-1")).error == "unknown_volume"
    plane.hypervisor.check_conservation()
