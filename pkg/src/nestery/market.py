"""Spot resale market for nested-cloud capacity.

A user who owns a RUNNING level-1 cloud VM can become a provider (after
filing a billing profile) and list slices of it as offers. Consumers buy
offers into contracts; the price of listed offers follows a spot law driven
by the backing host's core utilization, moving after every activation or
termination. Income accrues per simulated hour at the price agreed when the
contract was struck, never at the price of the moment.
"""

from __future__ import annotations

import json
import os
import uuid as uuidlib
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_EVEN
from typing import Optional, Union

from . import scheduler as sched
from .model import (
    CONSUMING_STATES,
    CapacityGone,
    ContractNotActive,
    IncompleteProfile,
    InvalidPriceBand,
    InvariantViolation,
    Launch,
    NoBackingCloud,
    NotAProvider,
    NotYourContract,
    Rescale,
    ResourceVector,
    SpecExceedsFreeCapacity,
    Start,
    Stop,
    UnknownContract,
    UnknownOffer,
    UnknownUser,
    VMDefinition,
    VMState,
    VolumeCreate,
    VolumeDelete,
    relayed_error,
    vector_fits,
)

QUANT = Decimal("0.0001")
PRICE_ALPHA = Decimal("0.5")
TARGET_UTILIZATION = Decimal("0.8")
SIMULATED_HOUR_S = 3600.0
DEFAULT_SLICE_IMAGE = "slice.qcow2"


def money(value: Union[str, int, float, Decimal]) -> Decimal:
    """Currency with exactly four fractional digits."""
    return Decimal(str(value)).quantize(QUANT, rounding=ROUND_HALF_EVEN)


@dataclass
class ProviderProfile:
    """Billing identity required before anyone may sell: company name, tax
    number, and at least one of bank account or postal address."""

    company_name: str = ""
    tax_number: str = ""
    bank_account: Optional[str] = None
    postal_address: Optional[str] = None

    def validate(self) -> "ProviderProfile":
        if not self.company_name:
            raise IncompleteProfile("company_name")
        if not self.tax_number:
            raise IncompleteProfile("tax_number")
        if not self.bank_account and not self.postal_address:
            raise IncompleteProfile("bank_account_or_postal_address")
        return self

    def to_dict(self) -> dict:
        return {
            "company_name": self.company_name,
            "tax_number": self.tax_number,
            "bank_account": self.bank_account,
            "postal_address": self.postal_address,
        }


@dataclass
class PricePoint:
    offer_id: str
    timestamp: float
    price: Decimal

    def to_dict(self) -> dict:
        return {"offer_id": self.offer_id, "t": self.timestamp, "price": str(self.price)}


@dataclass
class ServiceOffer:
    offer_id: str
    provider_id: str
    kind: str  # "compute" or "storage"
    backing_vm: str
    floor_price: Decimal
    cap_price: Decimal
    current_price: Decimal
    spec: Optional[ResourceVector] = None  # compute offers
    size_gib: Optional[int] = None  # storage offers
    quality: dict = field(default_factory=dict)
    listed: bool = True

    def to_dict(self) -> dict:
        return {
            "offer_id": self.offer_id,
            "provider_id": self.provider_id,
            "kind": self.kind,
            "backing_vm": self.backing_vm,
            "floor_price": str(self.floor_price),
            "cap_price": str(self.cap_price),
            "current_price": str(self.current_price),
            "spec": self.spec.to_dict() if self.spec else None,
            "size_gib": self.size_gib,
            "quality": self.quality,
            "listed": self.listed,
        }


@dataclass
class Contract:
    contract_id: str
    offer_id: str
    consumer_id: str
    provider_id: str
    kind: str
    agreed_price: Decimal  # per simulated hour, locked at negotiation
    activated_at: float
    allocation: str  # vm uuid or volume id
    state: str = "ACTIVE"  # ACTIVE or TERMINATED
    hours_billed: int = 0

    def to_dict(self) -> dict:
        return {
            "contract_id": self.contract_id,
            "offer_id": self.offer_id,
            "consumer_id": self.consumer_id,
            "provider_id": self.provider_id,
            "kind": self.kind,
            "agreed_price": str(self.agreed_price),
            "activated_at": self.activated_at,
            "allocation": self.allocation,
            "state": self.state,
            "hours_billed": self.hours_billed,
        }


@dataclass
class IncomeEvent:
    timestamp: float
    contract_id: str
    amount: Decimal

    def to_dict(self) -> dict:
        return {"t": self.timestamp, "contract_id": self.contract_id, "amount": str(self.amount)}


@dataclass
class UserAccount:
    user_id: str
    roles: set = field(default_factory=lambda: {"consumer"})
    profile: Optional[ProviderProfile] = None
    backing_vm: Optional[str] = None
    purchase_cost: Decimal = field(default_factory=lambda: money(0))
    income_events: list = field(default_factory=list)


class Market:
    """Offers, contracts and ledgers live in one JSON snapshot beside the
    journals. Allocations behind contracts travel the durable queue, so a
    reopened data directory rebuilds machines and market in agreement."""

    def __init__(self, plane, path: Optional[str] = None):
        self.plane = plane
        self.path = path
        self.users: dict[str, UserAccount] = {}
        self.offers: dict[str, ServiceOffer] = {}
        self.contracts: dict[str, Contract] = {}
        self.prices: dict[str, list[PricePoint]] = {}
        self._next_offer = 1
        self._next_contract = 1
        self._next_gesture = 1

    # -- persistence ---------------------------------------------------------

    def _save(self) -> None:
        if self.path is None:
            return
        doc = {
            "users": {
                uid: {
                    "roles": sorted(a.roles),
                    "profile": a.profile.to_dict() if a.profile else None,
                    "backing_vm": a.backing_vm,
                    "purchase_cost": str(a.purchase_cost),
                    "income_events": [e.to_dict() for e in a.income_events],
                }
                for uid, a in self.users.items()
            },
            "offers": {oid: o.to_dict() for oid, o in self.offers.items()},
            "contracts": {cid: c.to_dict() for cid, c in self.contracts.items()},
            "prices": {oid: [p.to_dict() for p in pts] for oid, pts in self.prices.items()},
            "counters": [self._next_offer, self._next_contract, self._next_gesture],
        }
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        os.replace(tmp, self.path)

    def load(self) -> None:
        if self.path is None or not os.path.exists(self.path):
            return
        with open(self.path, encoding="utf-8") as fh:
            doc = json.load(fh)
        self.users = {}
        for uid, u in doc.get("users", {}).items():
            profile = None
            if u.get("profile"):
                p = u["profile"]
                profile = ProviderProfile(
                    company_name=p["company_name"],
                    tax_number=p["tax_number"],
                    bank_account=p.get("bank_account"),
                    postal_address=p.get("postal_address"),
                )
            self.users[uid] = UserAccount(
                user_id=uid,
                roles=set(u.get("roles", ["consumer"])),
                profile=profile,
                backing_vm=u.get("backing_vm"),
                purchase_cost=money(u.get("purchase_cost", "0")),
                income_events=[
                    IncomeEvent(e["t"], e["contract_id"], money(e["amount"]))
                    for e in u.get("income_events", [])
                ],
            )
        self.offers = {}
        for oid, o in doc.get("offers", {}).items():
            self.offers[oid] = ServiceOffer(
                offer_id=oid,
                provider_id=o["provider_id"],
                kind=o["kind"],
                backing_vm=o["backing_vm"],
                floor_price=money(o["floor_price"]),
                cap_price=money(o["cap_price"]),
                current_price=money(o["current_price"]),
                spec=ResourceVector.from_dict(o["spec"]) if o.get("spec") else None,
                size_gib=o.get("size_gib"),
                quality=o.get("quality", {}),
                listed=o.get("listed", True),
            )
        self.contracts = {
            cid: Contract(
                contract_id=cid,
                offer_id=c["offer_id"],
                consumer_id=c["consumer_id"],
                provider_id=c["provider_id"],
                kind=c["kind"],
                agreed_price=money(c["agreed_price"]),
                activated_at=c["activated_at"],
                allocation=c["allocation"],
                state=c["state"],
                hours_billed=c["hours_billed"],
            )
            for cid, c in doc.get("contracts", {}).items()
        }
        self.prices = {
            oid: [PricePoint(p["offer_id"], p["t"], money(p["price"])) for p in pts]
            for oid, pts in doc.get("prices", {}).items()
        }
        counters = doc.get("counters", [1, 1, 1])
        self._next_offer, self._next_contract, self._next_gesture = counters

    # -- users -------------------------------------------------------------

    def ensure_user(self, user_id: str) -> UserAccount:
        account = self.users.get(user_id)
        if account is None:
            account = UserAccount(user_id=user_id)
            self.users[user_id] = account
        return account

    def get_user(self, user_id: str) -> UserAccount:
        account = self.users.get(user_id)
        if account is None:
            raise UnknownUser(f"no user {user_id}")
        return account

    def become_provider(
        self, user_id: str, profile: ProviderProfile, backing_vm: str
    ) -> UserAccount:
        """Consumer-to-provider transition. Requires a complete billing
        profile and a RUNNING level-1 cloud VM that the user owns or holds
        under contract."""
        profile.validate()
        account = self.ensure_user(user_id)
        record = self.plane.hypervisor.vms.get(backing_vm)
        if record is None or record.level != 1:
            raise NoBackingCloud(f"{backing_vm} is not a level-1 cloud VM")
        if record.state is not VMState.RUNNING:
            raise NoBackingCloud(f"backing VM is {record.state.value}, not RUNNING")
        owned = self.plane.hypervisor.owners.get(backing_vm) == user_id
        contracted = any(
            c.consumer_id == user_id and c.allocation == backing_vm and c.state == "ACTIVE"
            for c in self.contracts.values()
        )
        if not owned and not contracted:
            raise NoBackingCloud(f"{backing_vm} is not owned or contracted by {user_id}")
        account.roles.add("provider")
        account.profile = profile
        account.backing_vm = backing_vm
        self._save()
        return account

    def purchase_nested_cloud(
        self,
        user_id: str,
        definition: VMDefinition,
        price: Union[str, int, float, Decimal],
        parent: Optional[str] = None,
    ) -> "Contract":
        """Primary acquisition of a level-1 cloud from the infrastructure
        operator: launches the VM under the user's ownership and books the
        one-time cost against the user's ledger."""
        if definition.level != 1:
            raise InvariantViolation("level", "a nested cloud purchase must be level 1")
        account = self.ensure_user(user_id)
        contract_id = f"contract-{self._next_contract}"
        self._next_contract += 1
        result = self.plane.submit_and_run(
            Launch(definition=definition, parent=parent, owner=user_id),
            f"{contract_id}:alloc",
        )
        if not result.ok:
            raise relayed_error(result.error, result.detail)
        account.purchase_cost += money(price)
        contract = Contract(
            contract_id=contract_id,
            offer_id="primary",
            consumer_id=user_id,
            provider_id="operator",
            kind="cloud",
            agreed_price=money(0),
            activated_at=self.plane.clock.now(),
            allocation=result.data["uuid"],
        )
        self.contracts[contract.contract_id] = contract
        self._save()
        return contract

    # -- offers --------------------------------------------------------------

    def register_offer(
        self,
        provider_id: str,
        kind: str,
        floor_price,
        cap_price,
        initial_price,
        spec: Optional[ResourceVector] = None,
        size_gib: Optional[int] = None,
        quality: Optional[dict] = None,
    ) -> ServiceOffer:
        account = self.get_user(provider_id)
        if "provider" not in account.roles:
            raise NotAProvider(f"{provider_id} has not completed the provider transition")
        floor, cap, price = money(floor_price), money(cap_price), money(initial_price)
        if not (Decimal(0) < floor <= price <= cap):
            raise InvalidPriceBand(
                f"need 0 < floor <= price <= cap, got {floor}/{price}/{cap}"
            )
        backing = account.backing_vm
        host = self.plane.hypervisor.hosts.get(backing)
        if host is None:
            raise NoBackingCloud(f"backing host {backing} is gone")
        free = sched.free_capacity(host)
        if kind == "compute":
            if spec is None:
                raise InvariantViolation("spec", "compute offers need a resource vector")
            spec.validate()
            if not vector_fits(spec, free):
                raise SpecExceedsFreeCapacity(
                    "offered slice does not fit the backing cloud's free capacity"
                )
        elif kind == "storage":
            if size_gib is None or size_gib < 1:
                raise InvariantViolation("size_gib", "storage offers need a positive size")
            if size_gib > free.disk_gib:
                raise SpecExceedsFreeCapacity(
                    f"offered {size_gib} GiB exceeds free disk {free.disk_gib} GiB"
                )
        else:
            raise InvariantViolation("kind", "offer kind must be compute or storage")
        offer = ServiceOffer(
            offer_id=f"offer-{self._next_offer}",
            provider_id=provider_id,
            kind=kind,
            backing_vm=backing,
            floor_price=floor,
            cap_price=cap,
            current_price=price,
            spec=spec if kind == "compute" else None,
            size_gib=size_gib if kind == "storage" else None,
            quality=quality or {},
        )
        self._next_offer += 1
        self.offers[offer.offer_id] = offer
        self.prices[offer.offer_id] = [
            PricePoint(offer.offer_id, self.plane.clock.now(), price)
        ]
        self._save()
        return offer

    def get_offer(self, offer_id: str) -> ServiceOffer:
        offer = self.offers.get(offer_id)
        if offer is None:
            raise UnknownOffer(f"no offer {offer_id}")
        return offer

    def list_offers(
        self,
        kind: Optional[str] = None,
        max_price: Optional[Union[str, float, Decimal]] = None,
        min_spec: Optional[ResourceVector] = None,
    ) -> list[ServiceOffer]:
        """Listed offers cheapest first, offer id as the tiebreak."""
        out = []
        ceiling = money(max_price) if max_price is not None else None
        for offer in self.offers.values():
            if not offer.listed:
                continue
            if kind is not None and offer.kind != kind:
                continue
            if ceiling is not None and offer.current_price > ceiling:
                continue
            if min_spec is not None:
                if offer.spec is None or not vector_fits(min_spec, offer.spec):
                    continue
            out.append(offer)
        out.sort(key=lambda o: (o.current_price, o.offer_id))
        return out

    # -- spot pricing -----------------------------------------------------------

    def utilization(self, host_id: str) -> float:
        """Allocated fraction of the backing host's cores."""
        host = self.plane.hypervisor.hosts[host_id]
        allocated = sum(
            c.definition.resources.cpu_cores
            for c in host.children.values()
            if c.state in CONSUMING_STATES
        )
        return allocated / host.capacity.cpu_cores

    def update_spot_price(self, offer_id: str, utilization: float) -> PricePoint:
        """Spot law: price multiplies by 1 + 0.5 * (u - 0.8), then clamps to
        the offer's band. u = 0.8 holds the price still."""
        offer = self.get_offer(offer_id)
        mult = Decimal(1) + PRICE_ALPHA * (Decimal(str(utilization)) - TARGET_UTILIZATION)
        raw = (offer.current_price * mult).quantize(QUANT, rounding=ROUND_HALF_EVEN)
        clamped = min(max(raw, offer.floor_price), offer.cap_price)
        offer.current_price = clamped
        point = PricePoint(offer_id, self.plane.clock.now(), clamped)
        self.prices[offer_id].append(point)
        return point

    def reprice_backing(self, host_id: str) -> None:
        u = self.utilization(host_id)
        for offer in self.offers.values():
            if offer.listed and offer.backing_vm == host_id:
                self.update_spot_price(offer.offer_id, u)

    def price_history(
        self,
        offer_id: str,
        t_from: Optional[float] = None,
        t_to: Optional[float] = None,
    ) -> list[PricePoint]:
        self.get_offer(offer_id)
        points = self.prices.get(offer_id, [])
        return [
            p
            for p in points
            if (t_from is None or p.timestamp >= t_from)
            and (t_to is None or p.timestamp <= t_to)
        ]

    # -- contracts -----------------------------------------------------------------

    def negotiate_contract(self, consumer_id: str, offer_id: str) -> Contract:
        """Strike a contract at the offer's current price and allocate the
        slice through the queue. If the backing capacity no longer covers
        the offer, the offer is delisted and the negotiation fails."""
        offer = self.get_offer(offer_id)
        if not offer.listed:
            raise CapacityGone(f"offer {offer_id} is delisted")
        self.ensure_user(consumer_id)
        hv = self.plane.hypervisor
        host = hv.hosts.get(offer.backing_vm)
        backing_record = hv.vms.get(offer.backing_vm)
        if (
            host is None
            or backing_record is None
            or backing_record.state is not VMState.RUNNING
        ):
            offer.listed = False
            self._save()
            raise CapacityGone(f"backing cloud {offer.backing_vm} is not serving")
        contract_id = f"contract-{self._next_contract}"
        self._next_contract += 1
        if offer.kind == "compute":
            # slice identity is derived, not random: identical command
            # histories must rebuild identical state documents
            slice_uuid = uuidlib.uuid5(
                uuidlib.NAMESPACE_OID, f"{contract_id}:{offer_id}"
            ).hex
            definition = VMDefinition(
                uuid=slice_uuid,
                name=f"{contract_id}-{offer_id}",
                resources=offer.spec,
                image_ref=DEFAULT_SLICE_IMAGE,
                level=host.level + 1,
            )
            command = Launch(definition=definition, parent=host.node_id, owner=consumer_id)
        else:
            command = VolumeCreate(size_gib=offer.size_gib, host=host.node_id)
        result = self.plane.submit_and_run(command, f"{contract_id}:alloc")
        if not result.ok:
            if result.error in ("admission_denied", "insufficient_space"):
                offer.listed = False
                self._save()
                raise CapacityGone("backing capacity no longer covers the offer")
            raise relayed_error(result.error, result.detail)
        allocation = result.data["uuid"] if offer.kind == "compute" else result.data["volume_id"]
        contract = Contract(
            contract_id=contract_id,
            offer_id=offer_id,
            consumer_id=consumer_id,
            provider_id=offer.provider_id,
            kind=offer.kind,
            agreed_price=offer.current_price,
            activated_at=self.plane.clock.now(),
            allocation=allocation,
        )
        self.contracts[contract.contract_id] = contract
        self.reprice_backing(offer.backing_vm)
        self._save()
        return contract

    def get_contract(self, contract_id: str) -> Contract:
        contract = self.contracts.get(contract_id)
        if contract is None:
            raise UnknownContract(f"no contract {contract_id}")
        return contract

    def control_allocation(
        self,
        contract_id: str,
        cmd: str,
        caller: str,
        resources: Optional[ResourceVector] = None,
        idempotency_key: Optional[str] = None,
    ) -> dict:
        """Operate the allocation behind a contract on the consumer's
        behalf. Power and rescale gestures go through the queue with a
        stable idempotency key; failures come back as the original error."""
        contract = self.get_contract(contract_id)
        if contract.consumer_id != caller:
            raise NotYourContract(f"{contract_id} belongs to {contract.consumer_id}")
        if cmd == "status":
            return self._allocation_status(contract)
        if contract.state != "ACTIVE":
            raise ContractNotActive(f"{contract_id} is {contract.state}")
        if cmd == "terminate":
            return self._terminate(contract)
        if contract.kind == "storage":
            raise InvariantViolation("cmd", "storage allocations have no power state")
        if cmd == "start":
            command = Start(uuid=contract.allocation)
        elif cmd == "stop":
            command = Stop(uuid=contract.allocation)
        elif cmd == "rescale":
            if resources is None:
                raise InvariantViolation("resources", "rescale needs a resource vector")
            command = Rescale(uuid=contract.allocation, resources=resources)
        else:
            raise InvariantViolation("cmd", f"unknown contract command {cmd!r}")
        key = idempotency_key or f"{contract_id}:{cmd}:{self._next_gesture}"
        self._next_gesture += 1
        result = self.plane.submit_and_run(command, key)
        if not result.ok:
            raise relayed_error(result.error, result.detail)
        # primary purchases have no market offer behind them, nothing to reprice
        offer = self.offers.get(contract.offer_id)
        if offer is not None and offer.backing_vm in self.plane.hypervisor.hosts:
            self.reprice_backing(offer.backing_vm)
        self._save()
        return result.data or {}

    def _terminate(self, contract: Contract) -> dict:
        hv = self.plane.hypervisor
        offer = self.offers.get(contract.offer_id)
        if contract.kind in ("compute", "cloud"):
            record = hv.vms.get(contract.allocation)
            if record is not None and record.state in CONSUMING_STATES:
                result = self.plane.submit_and_run(
                    Stop(uuid=contract.allocation), f"{contract.contract_id}:terminate"
                )
                if not result.ok:
                    raise relayed_error(result.error, result.detail)
        elif contract.kind == "storage":
            vols = {v.volume_id for v in self.plane.blockstore.list_volumes()}
            if contract.allocation in vols:
                result = self.plane.submit_and_run(
                    VolumeDelete(volume_id=contract.allocation),
                    f"{contract.contract_id}:terminate",
                )
                if not result.ok:
                    raise relayed_error(result.error, result.detail)
        contract.state = "TERMINATED"
        if offer is not None and offer.backing_vm in hv.hosts:
            self.reprice_backing(offer.backing_vm)
        self._save()
        return {"contract_id": contract.contract_id, "state": contract.state}

    def _allocation_status(self, contract: Contract) -> dict:
        if contract.kind in ("compute", "cloud"):
            record = self.plane.hypervisor.vms.get(contract.allocation)
            return {
                "contract": contract.to_dict(),
                "allocation": {
                    "uuid": contract.allocation,
                    "state": record.state.value if record else "GONE",
                    "resources": record.definition.resources.to_dict() if record else None,
                },
            }
        vols = {v.volume_id: v for v in self.plane.blockstore.list_volumes()}
        vol = vols.get(contract.allocation)
        return {
            "contract": contract.to_dict(),
            "allocation": vol.to_dict() if vol else {"volume_id": contract.allocation, "state": "GONE"},
        }

    # -- billing ----------------------------------------------------------------------

    def accrue(self, now: float) -> None:
        """Credit providers for every whole simulated hour each ACTIVE
        contract has run since its last accrual."""
        changed = False
        for contract in self.contracts.values():
            if contract.state != "ACTIVE" or contract.offer_id == "primary":
                continue
            whole = int((now - contract.activated_at) // SIMULATED_HOUR_S)
            delta = whole - contract.hours_billed
            if delta <= 0:
                continue
            amount = money(contract.agreed_price * delta)
            provider = self.ensure_user(contract.provider_id)
            provider.income_events.append(
                IncomeEvent(timestamp=now, contract_id=contract.contract_id, amount=amount)
            )
            contract.hours_billed = whole
            changed = True
        if changed:
            self._save()

    def ledger_report(self, user_id: str) -> dict:
        account = self.get_user(user_id)
        cumulative = sum((e.amount for e in account.income_events), money(0))
        net = cumulative - account.purchase_cost
        return {
            "user_id": user_id,
            "purchase_cost": str(account.purchase_cost),
            "cumulative_income": str(cumulative),
            "net": str(net),
            "offset_achieved": net >= 0,
            "income_events": [e.to_dict() for e in account.income_events],
        }
