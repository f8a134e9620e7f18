"""Shared fixtures: a control plane on a temp directory with the simulated
clock, plus small builders for definitions and vectors."""

import uuid as uuidlib

import pytest

from nestery.model import ResourceVector, VMDefinition
from nestery.plane import ControlPlane
from nestery.scheduler import SimClock

HOST_CAPACITY = ResourceVector(
    cpu_cores=32, cpu_priority=1024, ram_mib=65536, disk_gib=1000, nics=16
)


def make_vector(cores=2, priority=512, ram=1024, disk=10, nics=1) -> ResourceVector:
    return ResourceVector(
        cpu_cores=cores, cpu_priority=priority, ram_mib=ram, disk_gib=disk, nics=nics
    )


def make_definition(
    uuid=None, name=None, level=1, cores=2, ram=1024, disk=10, nics=1, priority=512,
    image="base.qcow2",
) -> VMDefinition:
    u = uuid or uuidlib.uuid4().hex
    return VMDefinition(
        uuid=u,
        name=name or f"vm-{u[:8]}",
        resources=make_vector(cores, priority, ram, disk, nics),
        image_ref=image,
        level=level,
    )


@pytest.fixture
def plane(tmp_path):
    p = ControlPlane(str(tmp_path / "data"), clock=SimClock(), fsync=False)
    p.init_host("host0", HOST_CAPACITY)
    yield p
    p.close()


@pytest.fixture
def clock(plane):
    return plane.clock
