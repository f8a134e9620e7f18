"""Operator command line.

Every subcommand is a thin shell over one module operation against the data
directory in NESTERY_DATA_DIR (or --data-dir). Domain errors print as a
single JSON object on stderr and exit 1; usage errors exit 2. With
NESTERY_CLOCK=sim the simulated clock value is kept in the data directory
so consecutive invocations share one timeline.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import uuid as uuidlib
from typing import Optional

from .market import ProviderProfile
from .model import (
    Launch,
    NesteryError,
    Rescale,
    ResourceVector,
    ScheduleAllocation,
    SnapshotCreate,
    Start,
    Stop,
    UnknownVm,
    VMDefinition,
    VolumeCreate,
    VolumeDelete,
    VolumeResize,
    relayed_error,
)
from .plane import ControlPlane
from .scheduler import SimClock

DEFAULT_DATA_DIR = "./nestery-data"


# -- plane lifecycle ------------------------------------------------------------


def _data_dir(args) -> str:
    return args.data_dir or os.environ.get("NESTERY_DATA_DIR", DEFAULT_DATA_DIR)


def _clock_mode(args) -> str:
    return args.clock_mode or os.environ.get("NESTERY_CLOCK", "wall")


def _open_plane(args) -> ControlPlane:
    data_dir = _data_dir(args)
    clock = None
    if _clock_mode(args) == "sim":
        clock = SimClock()
        stamp = os.path.join(data_dir, "clock")
        if os.path.exists(stamp):
            with open(stamp) as fh:
                clock.set(float(fh.read().strip() or "0"))
    return ControlPlane(data_dir, clock=clock)


def _close_plane(args, plane: ControlPlane) -> None:
    if isinstance(plane.clock, SimClock):
        with open(os.path.join(_data_dir(args), "clock"), "w") as fh:
            fh.write(repr(plane.clock.now()))
    plane.close()


def _emit(args, doc: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(doc, indent=2))
    else:
        print(json.dumps(doc))


def _run_or_raise(plane: ControlPlane, command, key: Optional[str] = None) -> dict:
    result = plane.submit_and_run(command, key)
    if not result.ok:
        raise relayed_error(result.error, result.detail)
    return result.data or {}


# -- resource flag plumbing -------------------------------------------------------


def _add_resource_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cores", type=int, help="cpu cores")
    p.add_argument("--priority", type=int, help="cpu weight 1..1024")
    p.add_argument("--ram", type=int, help="MiB")
    p.add_argument("--disk", type=int, help="GiB")
    p.add_argument("--nics", type=int, help="network interfaces")


def _vector(args, base: Optional[ResourceVector] = None) -> ResourceVector:
    """Flags overlay the base vector; missing flags keep base values or,
    with no base, modest defaults."""
    fallback = base or ResourceVector(
        cpu_cores=1, cpu_priority=512, ram_mib=256, disk_gib=0, nics=1
    )
    return ResourceVector(
        cpu_cores=args.cores if args.cores is not None else fallback.cpu_cores,
        cpu_priority=args.priority if args.priority is not None else fallback.cpu_priority,
        ram_mib=args.ram if args.ram is not None else fallback.ram_mib,
        disk_gib=args.disk if args.disk is not None else fallback.disk_gib,
        nics=args.nics if args.nics is not None else fallback.nics,
    )


def _definition(args) -> VMDefinition:
    return VMDefinition(
        uuid=(args.uuid or uuidlib.uuid4().hex).lower(),
        name=args.name,
        resources=_vector(args),
        image_ref=args.image,
        level=args.level,
    )


# -- handlers -------------------------------------------------------------------------


def cmd_init(args) -> int:
    plane = _open_plane(args)
    try:
        host = plane.init_host(args.node_id, _vector(args))
        _emit(args, {"node_id": host.node_id, "capacity": host.capacity.to_dict()})
        return 0
    finally:
        _close_plane(args, plane)


def cmd_launch(args) -> int:
    plane = _open_plane(args)
    try:
        data = _run_or_raise(
            plane,
            Launch(definition=_definition(args), parent=args.parent, owner=args.owner),
            args.key,
        )
        _emit(args, data)
        return 0
    finally:
        _close_plane(args, plane)


def cmd_start(args) -> int:
    plane = _open_plane(args)
    try:
        _emit(args, _run_or_raise(plane, Start(uuid=args.uuid), args.key))
        return 0
    finally:
        _close_plane(args, plane)


def cmd_stop(args) -> int:
    plane = _open_plane(args)
    try:
        _emit(args, _run_or_raise(plane, Stop(uuid=args.uuid), args.key))
        return 0
    finally:
        _close_plane(args, plane)


def cmd_rescale(args) -> int:
    plane = _open_plane(args)
    try:
        record = plane.hypervisor.vms.get(args.uuid)
        if record is None:
            raise UnknownVm(f"no vm {args.uuid}")
        vector = _vector(args, base=record.definition.resources)
        _emit(args, _run_or_raise(plane, Rescale(uuid=args.uuid, resources=vector), args.key))
        return 0
    finally:
        _close_plane(args, plane)


def cmd_schedule(args) -> int:
    plane = _open_plane(args)
    try:
        data = _run_or_raise(
            plane,
            ScheduleAllocation(
                definition=_definition(args),
                start_time=args.start,
                duration_s=args.duration,
                parent=args.parent,
                owner=args.owner,
            ),
            args.key,
        )
        _emit(args, data)
        return 0
    finally:
        _close_plane(args, plane)


def cmd_status(args) -> int:
    plane = _open_plane(args)
    try:
        _emit(args, plane.status())
        return 0
    finally:
        _close_plane(args, plane)


def cmd_advance(args) -> int:
    plane = _open_plane(args)
    try:
        now = plane.advance(args.seconds)
        _emit(args, {"now": now})
        return 0
    finally:
        _close_plane(args, plane)


def cmd_volume_create(args) -> int:
    plane = _open_plane(args)
    try:
        _emit(args, _run_or_raise(plane, VolumeCreate(size_gib=args.size, host=args.host), args.key))
        return 0
    finally:
        _close_plane(args, plane)


def cmd_volume_resize(args) -> int:
    plane = _open_plane(args)
    try:
        _emit(
            args,
            _run_or_raise(plane, VolumeResize(volume_id=args.volume_id, size_gib=args.size), args.key),
        )
        return 0
    finally:
        _close_plane(args, plane)


def cmd_volume_delete(args) -> int:
    plane = _open_plane(args)
    try:
        _emit(args, _run_or_raise(plane, VolumeDelete(volume_id=args.volume_id), args.key))
        return 0
    finally:
        _close_plane(args, plane)


def cmd_snapshot(args) -> int:
    plane = _open_plane(args)
    try:
        _emit(
            args,
            _run_or_raise(plane, SnapshotCreate(vm_uuid=args.vm_uuid, volume_id=args.volume), args.key),
        )
        return 0
    finally:
        _close_plane(args, plane)


# -- market handlers -----------------------------------------------------------------


def cmd_market_offers(args) -> int:
    plane = _open_plane(args)
    try:
        offers = plane.market.list_offers(kind=args.kind, max_price=args.max_price)
        _emit(args, {"offers": [o.to_dict() for o in offers]})
        return 0
    finally:
        _close_plane(args, plane)


def cmd_market_register_offer(args) -> int:
    plane = _open_plane(args)
    try:
        spec = None
        if args.kind == "compute":
            spec = _vector(args)
        offer = plane.market.register_offer(
            provider_id=args.user,
            kind=args.kind,
            floor_price=args.floor,
            cap_price=args.cap,
            initial_price=args.price,
            spec=spec,
            size_gib=args.size,
            quality=dict(kv.split("=", 1) for kv in args.quality or []),
        )
        _emit(args, offer.to_dict())
        return 0
    finally:
        _close_plane(args, plane)


def cmd_market_negotiate(args) -> int:
    plane = _open_plane(args)
    try:
        contract = plane.market.negotiate_contract(args.user, args.offer_id)
        _emit(args, contract.to_dict())
        return 0
    finally:
        _close_plane(args, plane)


def cmd_market_prices(args) -> int:
    plane = _open_plane(args)
    try:
        points = plane.market.price_history(args.offer_id, args.t_from, args.t_to)
        _emit(args, {"offer_id": args.offer_id, "points": [p.to_dict() for p in points]})
        return 0
    finally:
        _close_plane(args, plane)


def cmd_market_ledger(args) -> int:
    plane = _open_plane(args)
    try:
        _emit(args, plane.market.ledger_report(args.user))
        return 0
    finally:
        _close_plane(args, plane)


def cmd_market_become_provider(args) -> int:
    plane = _open_plane(args)
    try:
        profile = ProviderProfile(
            company_name=args.company,
            tax_number=args.tax,
            bank_account=args.bank,
            postal_address=args.postal,
        )
        account = plane.market.become_provider(args.user, profile, args.backing_vm)
        _emit(
            args,
            {
                "user_id": account.user_id,
                "roles": sorted(account.roles),
                "backing_vm": account.backing_vm,
            },
        )
        return 0
    finally:
        _close_plane(args, plane)


def cmd_market_control(args) -> int:
    plane = _open_plane(args)
    try:
        resources = None
        if args.command == "rescale":
            contract = plane.market.get_contract(args.contract_id)
            record = plane.hypervisor.vms.get(contract.allocation)
            base = record.definition.resources if record else None
            resources = _vector(args, base=base)
        data = plane.market.control_allocation(
            args.contract_id,
            args.command,
            caller=args.user,
            resources=resources,
            idempotency_key=args.key,
        )
        _emit(args, data)
        return 0
    finally:
        _close_plane(args, plane)


# -- bench handlers ----------------------------------------------------------------


def cmd_bench_calibrate(args) -> int:
    from . import perfbench as pb

    profile = pb.LoadProfile(users=args.users, period_s=args.period, seed=args.seed)
    target = pb.StatsSummary(avg=args.avg, p80=args.p80, p90=args.p90)
    base = pb.calibrate(target, profile, pb.OverheadModel(), serving_slots=args.slots)
    _emit(args, {"mu": base.mu, "sigma": base.sigma})
    return 0


def cmd_bench_run(args) -> int:
    from . import perfbench as pb

    model = pb.OverheadModel()
    profile = pb.LoadProfile(users=args.users, period_s=args.period, seed=args.seed)
    target = pb.StatsSummary(avg=args.avg, p80=args.p80, p90=args.p90)
    base = pb.calibrate(target, profile, model, serving_slots=args.slots)
    result = pb.run_experiment(model, profile, base, serving_slots=args.slots)
    doc = result.summary_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    if args.plot:
        _write_plot_data(args.plot, result)
    _emit(args, doc)
    return 0


def _write_plot_data(path: str, result) -> None:
    """Gnuplot-ready series: one dataset per level, separated by two blank
    lines so `plot ... index N` addresses a level. Columns are request
    start time and duration."""
    from . import perfbench as pb

    with open(path, "w", encoding="utf-8") as fh:
        blocks = []
        for _, key in pb.LEVEL_KEYS:
            lines = [f"# {key}"]
            for sample in result.series[key]:
                lines.append(f"{sample.start_s:.6f} {sample.duration_s:.6f}")
            blocks.append("\n".join(lines))
        fh.write("\n\n\n".join(blocks) + "\n")


# -- service handlers ------------------------------------------------------------------


def cmd_serve(args) -> int:
    from .gateway import ApiConfig, serve

    tokens = {}
    for pair in args.token or []:
        user, _, tok = pair.partition("=")
        if not tok:
            raise SystemExit(2)
        tokens[tok] = user
    config = ApiConfig(
        data_dir=_data_dir(args),
        listen=args.listen or os.environ.get("NESTERY_LISTEN", "127.0.0.1:8750"),
        clock_mode=_clock_mode(args),
        tokens=tokens,
    )
    serve(config)
    return 0


# -- parser ----------------------------------------------------------------------------


def _definition_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--name", required=True)
    p.add_argument("--uuid", help="32 hex chars; generated when omitted")
    p.add_argument("--image", default="base.qcow2")
    p.add_argument("--level", type=int, default=1, choices=(1, 2))
    p.add_argument("--parent", help="host node id; required for level 2")
    p.add_argument("--owner")
    _add_resource_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestery",
        description="queue-driven nested-cloud orchestrator",
    )
    parser.add_argument("--data-dir", help="journal directory (env NESTERY_DATA_DIR)")
    parser.add_argument(
        "--clock",
        dest="clock_mode",
        choices=("wall", "sim"),
        help="clock mode (env NESTERY_CLOCK)",
    )
    sub = parser.add_subparsers(dest="cmd")

    p = sub.add_parser("init", help="register a physical host")
    p.add_argument("--node-id", default="host0")
    _add_resource_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("launch", help="define and run a guest")
    _definition_flags(p)
    p.add_argument("--key", help="idempotency key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_launch)

    p = sub.add_parser("start", help="boot a stopped guest")
    p.add_argument("uuid")
    p.add_argument("--key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_start)

    p = sub.add_parser("stop", help="shut a guest down")
    p.add_argument("uuid")
    p.add_argument("--key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stop)

    p = sub.add_parser("rescale", help="resize a running guest in place")
    p.add_argument("uuid")
    _add_resource_flags(p)
    p.add_argument("--key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_rescale)

    p = sub.add_parser("schedule", help="book a future allocation")
    _definition_flags(p)
    p.add_argument("--start", type=float, required=True, help="absolute start, seconds")
    p.add_argument("--duration", type=int, required=True, help="seconds")
    p.add_argument("--key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("status", help="full machine tree")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("advance", help="move the simulated clock forward")
    p.add_argument("seconds", type=float)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_advance)

    vol = sub.add_parser("volume", help="block volume operations").add_subparsers(
        dest="volcmd", required=True
    )
    p = vol.add_parser("create")
    p.add_argument("--size", type=int, required=True, help="GiB")
    p.add_argument("--host")
    p.add_argument("--key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_volume_create)
    p = vol.add_parser("resize")
    p.add_argument("volume_id")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_volume_resize)
    p = vol.add_parser("delete")
    p.add_argument("volume_id")
    p.add_argument("--key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_volume_delete)

    p = sub.add_parser("snapshot", help="copy a guest's disk into a volume")
    p.add_argument("vm_uuid")
    p.add_argument("--volume", required=True)
    p.add_argument("--key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_snapshot)

    market = sub.add_parser("market", help="resale market operations").add_subparsers(
        dest="marketcmd", required=True
    )
    p = market.add_parser("offers")
    p.add_argument("--kind", choices=("compute", "storage"))
    p.add_argument("--max-price")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_market_offers)
    p = market.add_parser("register-offer")
    p.add_argument("--user", required=True)
    p.add_argument("--kind", required=True, choices=("compute", "storage"))
    p.add_argument("--floor", required=True)
    p.add_argument("--cap", required=True)
    p.add_argument("--price", required=True)
    p.add_argument("--size", type=int, help="GiB, storage offers")
    p.add_argument("--quality", action="append", metavar="K=V")
    _add_resource_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_market_register_offer)
    p = market.add_parser("negotiate")
    p.add_argument("offer_id")
    p.add_argument("--user", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_market_negotiate)
    p = market.add_parser("prices")
    p.add_argument("offer_id")
    p.add_argument("--from", dest="t_from", type=float)
    p.add_argument("--to", dest="t_to", type=float)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_market_prices)
    p = market.add_parser("ledger")
    p.add_argument("user")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_market_ledger)
    p = market.add_parser("become-provider")
    p.add_argument("--user", required=True)
    p.add_argument("--company", required=True)
    p.add_argument("--tax", required=True)
    p.add_argument("--bank")
    p.add_argument("--postal")
    p.add_argument("--backing-vm", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_market_become_provider)
    p = market.add_parser("control")
    p.add_argument("contract_id")
    p.add_argument("command", choices=("start", "stop", "rescale", "status", "terminate"))
    p.add_argument("--user", required=True)
    _add_resource_flags(p)
    p.add_argument("--key")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_market_control)

    bench = sub.add_parser("bench", help="response-time experiment").add_subparsers(
        dest="benchcmd", required=True
    )
    for name in ("calibrate", "run"):
        p = bench.add_parser(name)
        p.add_argument("--avg", type=float, default=0.082)
        p.add_argument("--p80", type=float, default=0.081)
        p.add_argument("--p90", type=float, default=0.098)
        p.add_argument("--users", type=int, default=64)
        p.add_argument("--period", type=float, default=180.0)
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--slots", type=int, default=None)
        p.add_argument("--json", action="store_true")
        if name == "run":
            p.add_argument("--out", help="write the summary JSON here")
            p.add_argument("--plot", help="write gnuplot-ready sample series here")
            p.set_defaults(func=cmd_bench_run)
        else:
            p.set_defaults(func=cmd_bench_calibrate)

    p = sub.add_parser("serve", help="run the HTTP gateway")
    p.add_argument("--listen", help="host:port (env NESTERY_LISTEN)")
    p.add_argument(
        "--token",
        action="append",
        metavar="USER=TOKEN",
        help="static bearer token; repeatable",
    )
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if getattr(args, "func", None) is None:
        parser.print_usage(file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except NesteryError as exc:
        print(json.dumps({"error": exc.code, "detail": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
