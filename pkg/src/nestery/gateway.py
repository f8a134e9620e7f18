"""HTTP front door for orchestration and market operations.

One process serves both surfaces: direct command injection for operators
(POST /commands, async 202 + message id) and the market API the web UI
consumes. Authentication is a static bearer-token table mapping each token
to a user id; there is no sign-up flow.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from typing import Optional

from fastapi import Depends, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .market import ProviderProfile
from .model import (
    BindFailure,
    IllegalState,
    MalformedDocument,
    NesteryError,
    ResourceVector,
    command_from_dict,
)
from .plane import ControlPlane
from .scheduler import SimClock

DEFAULT_LISTEN = "127.0.0.1:8750"


@dataclass
class ApiConfig:
    data_dir: str
    listen: str = DEFAULT_LISTEN
    clock_mode: str = "wall"  # "wall" or "sim"
    tokens: dict = field(default_factory=dict)  # token -> user id

    def validate(self) -> "ApiConfig":
        if not os.path.isdir(self.data_dir) or not os.access(self.data_dir, os.W_OK):
            raise BindFailure(f"data directory {self.data_dir} is not writable")
        if self.clock_mode not in ("wall", "sim"):
            raise MalformedDocument(f"unknown clock mode {self.clock_mode!r}")
        return self


def load_tokens(data_dir: str) -> dict:
    """Token table from <data_dir>/tokens.json, one fallback dev token."""
    path = os.path.join(data_dir, "tokens.json")
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            table = json.load(fh)
        if not isinstance(table, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in table.items()
        ):
            raise MalformedDocument("tokens.json must map token strings to user ids")
        return table
    return {"dev-token": "admin"}


def create_app(plane: ControlPlane, tokens: dict) -> FastAPI:
    app = FastAPI(title="nestery", docs_url=None, redoc_url=None, openapi_url=None)
    # the web board is plain static files served from anywhere, so the API
    # must answer cross-origin; auth stays on the bearer token
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    gate = threading.Lock()  # one writer at a time across the whole plane

    def current_user(request: Request) -> str:
        header = request.headers.get("authorization", "")
        if header.startswith("Bearer "):
            user = tokens.get(header[len("Bearer ") :])
            if user is not None:
                return user
        raise _Unauthorized()

    class _Unauthorized(Exception):
        pass

    @app.exception_handler(_Unauthorized)
    async def unauthorized_handler(request: Request, exc: _Unauthorized):
        return JSONResponse(
            status_code=401,
            content={"error": "unauthorized", "detail": "missing or unknown bearer token"},
        )

    @app.exception_handler(NesteryError)
    async def domain_error_handler(request: Request, exc: NesteryError):
        return JSONResponse(
            status_code=exc.http_status,
            content={"error": exc.code, "detail": str(exc)},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"error": "malformed_document", "detail": str(exc.errors()[:1])},
        )

    # -- orchestration ---------------------------------------------------------

    @app.get("/status")
    def get_status(user: str = Depends(current_user)):
        with gate:
            return plane.status()

    @app.post("/commands", status_code=202)
    def post_command(body: dict, user: str = Depends(current_user)):
        command = command_from_dict(body.get("command", {}))
        key = body.get("idempotency_key")
        if key is not None and not isinstance(key, str):
            raise MalformedDocument("idempotency_key must be a string")
        with gate:
            msg_id = plane.submit(command, key)
            plane.drain()
        return {"msg_id": msg_id, "status": "accepted"}

    @app.post("/clock/advance")
    def post_advance(body: dict, user: str = Depends(current_user)):
        seconds = body.get("seconds")
        if not isinstance(seconds, (int, float)) or seconds < 0:
            raise MalformedDocument("seconds must be a non-negative number")
        if not isinstance(plane.clock, SimClock):
            raise IllegalState("wall_clock", "advance needs the simulated clock")
        with gate:
            now = plane.advance(float(seconds))
        return {"now": now}

    # -- market ------------------------------------------------------------------

    @app.get("/offers")
    def get_offers(
        kind: Optional[str] = None,
        max_price: Optional[str] = None,
        user: str = Depends(current_user),
    ):
        with gate:
            offers = plane.market.list_offers(kind=kind, max_price=max_price)
            return {"offers": [o.to_dict() for o in offers]}

    @app.post("/offers", status_code=201)
    def post_offer(body: dict, user: str = Depends(current_user)):
        spec = None
        if body.get("spec") is not None:
            spec = ResourceVector.from_dict(body["spec"])
        with gate:
            offer = plane.market.register_offer(
                provider_id=user,
                kind=body.get("kind", ""),
                floor_price=body.get("floor_price", "0"),
                cap_price=body.get("cap_price", "0"),
                initial_price=body.get("price", body.get("cap_price", "0")),
                spec=spec,
                size_gib=body.get("size_gib"),
                quality=body.get("quality"),
            )
            return offer.to_dict()

    @app.get("/offers/{offer_id}/prices")
    def get_prices(
        offer_id: str,
        request: Request,
        user: str = Depends(current_user),
    ):
        t_from = _float_param(request, "from")
        t_to = _float_param(request, "to")
        with gate:
            points = plane.market.price_history(offer_id, t_from, t_to)
            return {"offer_id": offer_id, "points": [p.to_dict() for p in points]}

    @app.post("/contracts", status_code=201)
    def post_contract(body: dict, user: str = Depends(current_user)):
        offer_id = body.get("offer_id")
        if not isinstance(offer_id, str):
            raise MalformedDocument("offer_id must be a string")
        with gate:
            contract = plane.market.negotiate_contract(user, offer_id)
            return contract.to_dict()

    @app.get("/contracts/{contract_id}")
    def get_contract(contract_id: str, user: str = Depends(current_user)):
        with gate:
            return plane.market.get_contract(contract_id).to_dict()

    @app.post("/contracts/{contract_id}/commands")
    def post_contract_command(
        contract_id: str, body: dict, user: str = Depends(current_user)
    ):
        resources = None
        if body.get("resources") is not None:
            resources = ResourceVector.from_dict(body["resources"])
        with gate:
            return plane.market.control_allocation(
                contract_id,
                body.get("cmd", ""),
                caller=user,
                resources=resources,
                idempotency_key=body.get("idempotency_key"),
            )

    @app.post("/users/{user_id}/provider")
    def post_provider(user_id: str, body: dict, user: str = Depends(current_user)):
        if user != user_id:
            return JSONResponse(
                status_code=403,
                content={
                    "error": "not_your_contract",
                    "detail": "a user may only upgrade their own account",
                },
            )
        profile = ProviderProfile(
            company_name=body.get("company_name", ""),
            tax_number=body.get("tax_number", ""),
            bank_account=body.get("bank_account"),
            postal_address=body.get("postal_address"),
        )
        with gate:
            account = plane.market.become_provider(
                user_id, profile, body.get("backing_vm", "")
            )
            return {
                "user_id": account.user_id,
                "roles": sorted(account.roles),
                "backing_vm": account.backing_vm,
            }

    @app.get("/users/{user_id}/ledger")
    def get_ledger(user_id: str, user: str = Depends(current_user)):
        with gate:
            return plane.market.ledger_report(user_id)

    return app


def _float_param(request: Request, name: str) -> Optional[float]:
    raw = request.query_params.get(name)
    if raw is None:
        return None
    try:
        return float(raw)
    except ValueError:
        raise MalformedDocument(f"query parameter {name} must be a number")


def serve(config: ApiConfig, plane: Optional[ControlPlane] = None) -> None:
    """Blocking entry point. Builds the plane from the data directory
    unless one is injected (tests pass a prepared plane)."""
    import uvicorn

    config.validate()
    if plane is None:
        clock = SimClock() if config.clock_mode == "sim" else None
        plane = ControlPlane(config.data_dir, clock=clock)
    tokens = config.tokens or load_tokens(config.data_dir)
    app = create_app(plane, tokens)
    host, _, port = config.listen.rpartition(":")
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    except OSError as exc:
        raise BindFailure(str(exc)) from exc
