#!/usr/bin/env python3
"""Seed a data directory with a small resale economy and leave it ready for
the gateway: one physical host, a purchased level-1 cloud, a provider with
two listed offers, a consumer contract, and a few hours of billed income.

    python3 scripts/seed_demo.py --data-dir ./demo-data
    nestery --data-dir ./demo-data --clock sim status
    uvicorn --factory 'nestery.gateway:demo_app' ...   # or wire create_app yourself
"""

import argparse
import json
import sys

from nestery.market import ProviderProfile
from nestery.model import ResourceVector, VMDefinition
from nestery.plane import ControlPlane
from nestery.scheduler import SimClock

CLOUD_UUID = "feedfacefeedfacefeedfacefeedface"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default="./demo-data")
    ap.add_argument("--hours", type=int, default=3, help="billed hours to simulate")
    args = ap.parse_args()

    plane = ControlPlane(args.data_dir, clock=SimClock(), fsync=False)
    if not plane.hypervisor.hosts.get("host0"):
        plane.init_host(
            "host0",
            ResourceVector(cpu_cores=32, cpu_priority=1024, ram_mib=65536,
                           disk_gib=1000, nics=16),
        )

    market = plane.market
    market.purchase_nested_cloud(
        "alice",
        VMDefinition(
            uuid=CLOUD_UUID,
            name="alice-cloud",
            resources=ResourceVector(cpu_cores=16, cpu_priority=512,
                                     ram_mib=32768, disk_gib=400, nics=8),
            image_ref="base.qcow2",
            level=1,
        ),
        price=100,
    )
    market.become_provider(
        "alice",
        ProviderProfile(
            company_name="Alice Slices",
            tax_number="DE-900-1",
            bank_account="IBAN-DE-42",
        ),
        CLOUD_UUID,
    )
    market.register_offer(
        "alice", "compute",
        floor_price="4", cap_price="18", initial_price="9",
        spec=ResourceVector(cpu_cores=4, cpu_priority=512, ram_mib=4096,
                            disk_gib=40, nics=1),
        quality={"latency_class": "nested", "backing": "alice-cloud"},
    )
    market.register_offer(
        "alice", "storage",
        floor_price="1", cap_price="6", initial_price="2",
        size_gib=80,
    )
    market.negotiate_contract("bob", "offer-1")

    plane.advance(3600.0 * args.hours)

    status = plane.status()
    ledger = market.ledger_report("alice")
    print(json.dumps({
        "data_dir": args.data_dir,
        "now": status["now"],
        "hosts": len(status["hosts"]),
        "offers": [o.offer_id for o in market.list_offers()],
        "contracts": sorted(market.contracts),
        "alice_net": ledger["net"],
        "offset_achieved": ledger["offset_achieved"],
    }, indent=2))

    # the CLI reads this stamp to resume the simulated clock
    with open(f"{args.data_dir}/clock", "w") as fh:
        fh.write(repr(plane.clock.now()))
    plane.close()
    print(f"\nready: nestery --data-dir {args.data_dir} --clock sim status")
    return 0


if __name__ == "__main__":
    sys.exit(main())
