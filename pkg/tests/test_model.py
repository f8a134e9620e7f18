"""Resource vectors, the canonical definition document, lifecycle edges and
the command wire format."""

import pytest
from hypothesis import given, strategies as st

from nestery import model
from nestery.model import (
    IllegalState,
    InvariantViolation,
    MalformedDocument,
    ResourceVector,
    VMDefinition,
    VMRecord,
    VMState,
    command_from_dict,
    command_to_dict,
    error_status,
    first_unfit_dimension,
    parse_definition,
    relayed_error,
    serialize_definition,
    vector_fits,
)
from tests.conftest import make_definition, make_vector


# -- vectors ------------------------------------------------------------------


def test_vector_validate_accepts_bounds():
    ResourceVector(1, 1, 64, 0, 0).validate()
    ResourceVector(128, 1024, 1 << 20, 4096, 64).validate()


@pytest.mark.parametrize(
    "kwargs,field",
    [
        (dict(cpu_cores=0), "cpu_cores"),
        (dict(cpu_priority=0), "cpu_priority"),
        (dict(cpu_priority=1025), "cpu_priority"),
        (dict(ram_mib=63), "ram_mib"),
        (dict(disk_gib=-1), "disk_gib"),
        (dict(nics=-1), "nics"),
    ],
)
def test_vector_validate_rejects(kwargs, field):
    base = dict(cpu_cores=1, cpu_priority=512, ram_mib=64, disk_gib=0, nics=0)
    base.update(kwargs)
    with pytest.raises(InvariantViolation) as err:
        ResourceVector(**base).validate()
    assert err.value.field == field


def test_vector_validate_rejects_non_integers():
    with pytest.raises(InvariantViolation):
        ResourceVector(1.5, 512, 64, 0, 0).validate()
    # bool is an int subclass; still not a sane core count
    with pytest.raises(InvariantViolation):
        ResourceVector(True, 512, 64, 0, 0).validate()


def test_zero_free_vector_needs_no_validation():
    # capacity arithmetic may produce all-zero free vectors
    free = ResourceVector(0, 512, 0, 0, 0)
    assert not vector_fits(make_vector(), free)


def test_first_unfit_dimension_order():
    free = ResourceVector(2, 512, 1024, 10, 1)
    assert first_unfit_dimension(make_vector(cores=3, ram=9999, disk=99), free) == "cores"
    assert first_unfit_dimension(make_vector(cores=2, ram=9999, disk=99), free) == "ram"
    assert first_unfit_dimension(make_vector(cores=2, ram=1024, disk=99), free) == "disk"
    assert first_unfit_dimension(make_vector(cores=2, ram=1024, disk=10, nics=2), free) == "nics"
    assert first_unfit_dimension(make_vector(cores=2, ram=1024, disk=10, nics=1), free) is None


def test_priority_never_blocks_fit():
    free = ResourceVector(4, 1, 4096, 40, 2)
    assert vector_fits(make_vector(priority=1024), free)


small_ints = st.integers(min_value=0, max_value=64)


@given(
    req=st.tuples(small_ints, small_ints, small_ints, small_ints),
    free=st.tuples(small_ints, small_ints, small_ints, small_ints),
    shrink=st.tuples(small_ints, small_ints, small_ints, small_ints),
)
def test_fits_is_monotone(req, free, shrink):
    # if a request fits, any pointwise-smaller request fits too
    r = ResourceVector(req[0], 512, req[1], req[2], req[3])
    f = ResourceVector(free[0], 512, free[1], free[2], free[3])
    smaller = ResourceVector(
        max(0, req[0] - shrink[0]),
        512,
        max(0, req[1] - shrink[1]),
        max(0, req[2] - shrink[2]),
        max(0, req[3] - shrink[3]),
    )
    if vector_fits(r, f):
        assert vector_fits(smaller, f)


def test_vector_dict_roundtrip():
    v = make_vector(cores=3, priority=7, ram=777, disk=13, nics=2)
    assert ResourceVector.from_dict(v.to_dict()) == v


def test_vector_from_dict_rejects_garbage():
    with pytest.raises(MalformedDocument):
        ResourceVector.from_dict({"cores": 1})
    with pytest.raises(MalformedDocument):
        ResourceVector.from_dict({"cores": "x", "priority": 1, "ram_mib": 64, "disk_gib": 0, "nics": 0})


# -- definitions and the canonical document ------------------------------------


def _def_with(uuid="ab" * 16, name="n"):
    return VMDefinition(
        uuid=uuid, name=name, resources=make_vector(), image_ref="i", level=1
    )


def test_definition_validate_uuid_format():
    for bad in ("ABC", "g" * 32, "A" * 32, "0123", ""):
        with pytest.raises(InvariantViolation):
            _def_with(uuid=bad).validate()
    _def_with(uuid="0" * 32).validate()


def test_definition_validate_name():
    _def_with(name="x" * 128).validate()
    with pytest.raises(InvariantViolation):
        _def_with(name="x" * 129).validate()
    with pytest.raises(InvariantViolation):
        _def_with(name="").validate()
    with pytest.raises(InvariantViolation):
        _def_with(name="a\x00b").validate()
    with pytest.raises(InvariantViolation):
        _def_with(name="a\x7fb").validate()


def test_definition_validate_level():
    with pytest.raises(InvariantViolation):
        make_definition(level=0).validate()
    with pytest.raises(InvariantViolation):
        make_definition(level=3).validate()


def test_serialized_document_is_byte_stable():
    d = VMDefinition(
        uuid="00ff" * 8,
        name="web-tier",
        resources=ResourceVector(4, 256, 8192, 80, 2),
        image_ref="ubuntu-22.04.qcow2",
        level=1,
    )
    expected = (
        b'<vm uuid="00ff00ff00ff00ff00ff00ff00ff00ff" level="1">'
        b"<name>web-tier</name>"
        b'<resources cores="4" priority="256" ram_mib="8192" disk_gib="80" nics="2"/>'
        b'<image ref="ubuntu-22.04.qcow2"/>'
        b"</vm>"
    )
    assert serialize_definition(d) == expected
    # identical definitions are identical byte strings
    assert serialize_definition(d) == serialize_definition(d)


def test_parse_serialize_roundtrip():
    d = make_definition(name='ops "canary" <test> & friends', level=2)
    assert parse_definition(serialize_definition(d)) == d


def test_serialize_parse_is_identity_on_canonical_bytes():
    doc = serialize_definition(make_definition(name="steady"))
    assert serialize_definition(parse_definition(doc)) == doc


name_alphabet = st.characters(
    codec="utf-8", exclude_categories=("Cc", "Cs"), exclude_characters="\x7f"
)


@given(
    name=st.text(alphabet=name_alphabet, min_size=1, max_size=128),
    image=st.text(alphabet=name_alphabet, min_size=1, max_size=64),
    cores=st.integers(min_value=1, max_value=256),
    ram=st.integers(min_value=64, max_value=1 << 20),
    level=st.sampled_from([1, 2]),
)
def test_document_roundtrip_property(name, image, cores, ram, level):
    d = VMDefinition(
        uuid="ab" * 16,
        name=name,
        resources=ResourceVector(cores, 512, ram, 5, 1),
        image_ref=image,
        level=level,
    )
    assert parse_definition(serialize_definition(d)) == d


@pytest.mark.parametrize(
    "data",
    [
        b"\xff\xfe garbage",
        b"<vm uuid='a'>",
        b"<host/>",
        b'<vm uuid="' + b"a" * 32 + b'" level="1"><name>x</name></vm>',
        b'<vm level="1"><name>x</name><resources cores="1" priority="1" ram_mib="64" disk_gib="0" nics="0"/><image ref="i"/></vm>',
        b'<vm uuid="' + b"a" * 32 + b'" level="1"><name>x</name><resources cores="one" priority="1" ram_mib="64" disk_gib="0" nics="0"/><image ref="i"/></vm>',
        b'<vm uuid="' + b"a" * 32 + b'" level="1"><name>x</name><resources cores="1" priority="1" ram_mib="64" disk_gib="0" nics="0"/><image/></vm>',
    ],
)
def test_parse_rejects_malformed(data):
    with pytest.raises(MalformedDocument):
        parse_definition(data)


def test_parse_rejects_out_of_bounds_values():
    doc = (
        b'<vm uuid="' + b"a" * 32 + b'" level="1"><name>x</name>'
        b'<resources cores="0" priority="1" ram_mib="64" disk_gib="0" nics="0"/>'
        b'<image ref="i"/></vm>'
    )
    with pytest.raises(InvariantViolation) as err:
        parse_definition(doc)
    assert err.value.field == "cpu_cores"


def test_parse_lowercases_uuid():
    d = make_definition()
    doc = serialize_definition(d).replace(d.uuid.encode(), d.uuid.upper().encode())
    assert parse_definition(doc).uuid == d.uuid


# -- lifecycle ------------------------------------------------------------------


def test_lifecycle_legal_path():
    rec = VMRecord(definition=make_definition())
    rec.transition(VMState.RUNNING)
    rec.transition(VMState.RUNNING)  # rescale self-edge
    rec.transition(VMState.STOPPED)
    rec.transition(VMState.RUNNING)
    rec.transition(VMState.FAILED)


def test_lifecycle_rejects_and_preserves_state():
    rec = VMRecord(definition=make_definition())
    with pytest.raises(IllegalState):
        rec.transition(VMState.STOPPED)  # DEFINED cannot stop
    assert rec.state is VMState.DEFINED
    rec.transition(VMState.RUNNING)
    rec.transition(VMState.FAILED)
    for target in VMState:
        with pytest.raises(IllegalState):
            rec.transition(target)  # FAILED is terminal
        assert rec.state is VMState.FAILED


@given(st.lists(st.sampled_from(list(VMState)), max_size=30))
def test_lifecycle_fuzz_never_leaves_named_states(requests):
    rec = VMRecord(definition=make_definition(uuid="cd" * 16))
    for target in requests:
        before = rec.state
        try:
            rec.transition(target)
        except IllegalState:
            assert rec.state is before
        assert rec.state in set(VMState)


# -- command wire format -----------------------------------------------------------


def _sample_commands():
    d = make_definition(uuid="12" * 16)
    return [
        model.Launch(definition=d, parent="host0", owner="alice"),
        model.Launch(definition=d),
        model.Start(uuid=d.uuid),
        model.Stop(uuid=d.uuid),
        model.Rescale(uuid=d.uuid, resources=make_vector(cores=4)),
        model.ScheduleAllocation(definition=d, start_time=12.5, duration_s=60, parent="host0"),
        model.Status(),
        model.VolumeCreate(size_gib=7, host="host0"),
        model.VolumeCreate(size_gib=7),
        model.VolumeResize(volume_id="vol-1", size_gib=9),
        model.VolumeDelete(volume_id="vol-1"),
        model.SnapshotCreate(vm_uuid=d.uuid, volume_id="vol-1"),
    ]


@pytest.mark.parametrize("cmd", _sample_commands(), ids=lambda c: type(c).__name__)
def test_command_roundtrip(cmd):
    assert command_from_dict(command_to_dict(cmd)) == cmd


def test_command_from_dict_rejects_unknown_op():
    with pytest.raises(MalformedDocument):
        command_from_dict({"op": "explode"})
    with pytest.raises(MalformedDocument):
        command_from_dict({})
    with pytest.raises(MalformedDocument):
        command_from_dict({"op": "start"})  # uuid missing


# -- error plumbing -------------------------------------------------------------------


def test_error_status_maps_codes():
    assert error_status("admission_denied") == 409
    assert error_status("unknown_vm") == 404
    assert error_status("invariant_violation") == 422
    assert error_status("no_such_code") == 400


def test_relayed_error_reconstruction():
    exc = relayed_error("admission_denied", "insufficient cores")
    assert exc.code == "admission_denied"
    assert exc.http_status == 409
    assert "cores" in str(exc)
