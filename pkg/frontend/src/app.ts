// Browser bootstrap: owns mutable state, polls the gateway every two
// seconds, and routes clicks and form submits to client calls. All markup
// comes from render.ts; this file never builds HTML of its own.

import { ApiError, MarketClient } from "./api.js";
import { GestureKeys } from "./keys.js";
import {
  findVmEntry,
  renderLedger,
  renderOfferDetail,
  renderOfferList,
  renderProviderPage,
  renderStatusStrip,
  type ActionError,
  type OfferDetailState,
  type ProviderPageState,
} from "./render.js";
import type {
  AllocationStatus,
  LedgerReport,
  Offer,
  PricePoint,
  ProviderFormFields,
  ResourceVectorDoc,
  StatusDoc,
} from "./types.js";
import { validateProviderForm } from "./validate.js";

const POLL_MS = 2000;

const state = {
  client: null as MarketClient | null,
  userId: "",
  view: "offers" as "offers" | "provider" | "ledger",
  offers: [] as Offer[],
  selectedOffer: null as string | null,
  points: [] as PricePoint[],
  detailMissing: null as { status: number; error: ActionError } | null,
  // contracts this session negotiated, keyed by offer; the API has no
  // contract listing, so the board remembers its own
  contractsByOffer: new Map<string, string>(),
  contractDocs: new Map<string, AllocationStatus>(),
  busy: new Set<string>(), // gesture scopes with a request in flight
  actionErrors: new Map<string, ActionError>(),
  provider: {
    account: null,
    form: {
      company_name: "",
      tax_number: "",
      bank_account: "",
      postal_address: "",
      backing_vm: "",
    },
    fieldErrors: {},
    serverError: null,
    freeCapacity: null,
    offerResult: null,
    offerError: null,
    busy: false,
  } as ProviderPageState,
  ledger: null as LedgerReport | null,
  status: null as StatusDoc | null,
  connectError: null as ActionError | null,
};

const keys = new GestureKeys();
const lastHtml = new Map<string, string>();

function $(id: string): HTMLElement {
  return document.getElementById(id)!;
}

// re-render only when the markup changed and the user is not typing inside
// the target, otherwise the 2 s poll would eat form input
function mount(id: string, html: string): void {
  const el = $(id);
  if (lastHtml.get(id) === html) return;
  const active = document.activeElement;
  if (active && el.contains(active) && active.matches("input,select,textarea")) return;
  lastHtml.set(id, html);
  el.innerHTML = html;
}

function asActionError(err: unknown): ActionError {
  if (err instanceof ApiError) {
    return { error: err.code, detail: err.detail, status: err.status };
  }
  return { error: "network_error", detail: String(err), status: 0 };
}

// -- rendering -----------------------------------------------------------------

function detailState(): OfferDetailState | null {
  const id = state.selectedOffer;
  if (!id) return null;
  if (state.detailMissing) {
    return {
      kind: "missing",
      offerId: id,
      status: state.detailMissing.status,
      error: state.detailMissing.error,
    };
  }
  const offer = state.offers.find((o) => o.offer_id === id);
  if (!offer) return { kind: "loading", offerId: id };
  const contractId = state.contractsByOffer.get(id);
  const doc = contractId ? (state.contractDocs.get(contractId) ?? null) : null;
  const scope = contractId ?? `negotiate:${id}`;
  return {
    kind: "ready",
    offer,
    points: state.points,
    contract: doc,
    busy: state.busy.has(scope),
    actionError: state.actionErrors.get(scope) ?? null,
  };
}

function redraw(): void {
  document.querySelectorAll<HTMLElement>(".pane").forEach((pane) => {
    pane.hidden = pane.id !== `pane-${state.view}`;
  });
  document.querySelectorAll<HTMLButtonElement>("#tabs button").forEach((b) => {
    b.classList.toggle("current", b.dataset.view === state.view);
  });
  if (!state.client) {
    mount("offer-list", `<p class="empty">connect to a gateway first</p>`);
    mount("offer-detail", "");
    mount("provider-root", `<p class="empty">connect to a gateway first</p>`);
    mount("ledger-root", `<p class="empty">connect to a gateway first</p>`);
    mount("status-strip", renderStatusStrip(null));
    return;
  }
  mount("offer-list", renderOfferList(state.offers, state.selectedOffer));
  const detail = detailState();
  mount("offer-detail", detail ? renderOfferDetail(detail) : "");
  mount("provider-root", renderProviderPage(state.provider));
  mount(
    "ledger-root",
    state.ledger ? renderLedger(state.ledger) : `<p class="empty">no ledger yet</p>`,
  );
  mount(
    "status-strip",
    (state.connectError
      ? `<span class="error-text">${state.connectError.error}: ${state.connectError.detail}</span> `
      : "") + renderStatusStrip(state.status),
  );
}

// -- polling --------------------------------------------------------------------

async function refresh(): Promise<void> {
  const client = state.client;
  if (!client) return;
  try {
    state.status = await client.status();
    state.connectError = null;
    if (state.provider.account?.backing_vm) {
      state.provider.freeCapacity = findVmEntry(
        state.status,
        state.provider.account.backing_vm,
      );
    }
    state.offers = await client.offers();
    if (state.selectedOffer && !state.detailMissing) {
      state.points = await client.prices(state.selectedOffer);
      const contractId = state.contractsByOffer.get(state.selectedOffer);
      if (contractId) {
        state.contractDocs.set(contractId, await client.allocationStatus(contractId));
      }
    }
    if (state.view === "ledger") {
      try {
        state.ledger = await client.ledger(state.userId);
      } catch (err) {
        // a user with no market history has no ledger row yet
        if (!(err instanceof ApiError && err.status === 404)) throw err;
        state.ledger = null;
      }
    }
  } catch (err) {
    state.connectError = asActionError(err);
  }
  redraw();
}

// -- gestures ---------------------------------------------------------------------

async function selectOffer(offerId: string): Promise<void> {
  state.selectedOffer = offerId;
  state.detailMissing = null;
  state.points = [];
  const client = state.client!;
  try {
    state.points = await client.prices(offerId);
  } catch (err) {
    const e = asActionError(err);
    state.detailMissing = { status: e.status, error: e };
  }
  redraw();
}

async function negotiate(offerId: string): Promise<void> {
  const scope = `negotiate:${offerId}`;
  if (state.busy.has(scope)) return; // in flight, the button is disabled anyway
  state.busy.add(scope);
  state.actionErrors.delete(scope);
  redraw();
  try {
    const contract = await state.client!.negotiate(offerId);
    state.contractsByOffer.set(offerId, contract.contract_id);
    state.contractDocs.set(
      contract.contract_id,
      await state.client!.allocationStatus(contract.contract_id),
    );
  } catch (err) {
    state.actionErrors.set(scope, asActionError(err));
  } finally {
    state.busy.delete(scope);
  }
  await refresh();
}

async function contractCommand(
  contractId: string,
  cmd: string,
  resources?: ResourceVectorDoc,
): Promise<void> {
  if (state.busy.has(contractId)) return;
  // gesture identity includes the requested size, so retrying the same
  // rescale reuses its key while a corrected one gets a fresh key
  const gestureId = resources
    ? `${contractId}:${cmd}:${Object.values(resources).join(",")}`
    : `${contractId}:${cmd}`;
  const key = keys.begin(gestureId);
  state.busy.add(contractId);
  state.actionErrors.delete(contractId);
  redraw();
  try {
    await state.client!.contractCommand(contractId, cmd, {
      resources,
      idempotencyKey: key,
    });
    keys.settle(gestureId);
  } catch (err) {
    if (err instanceof ApiError) keys.settle(gestureId); // server consumed it
    state.actionErrors.set(contractId, asActionError(err));
  } finally {
    state.busy.delete(contractId);
  }
  try {
    state.contractDocs.set(contractId, await state.client!.allocationStatus(contractId));
  } catch {
    // the poll will retry
  }
  await refresh();
}

async function becomeProvider(form: ProviderFormFields): Promise<void> {
  const p = state.provider;
  p.form = form;
  const check = validateProviderForm(form);
  p.fieldErrors = check.errors;
  p.serverError = null;
  if (!check.ok) {
    redraw();
    return; // invalid forms never reach the gateway
  }
  p.busy = true;
  redraw();
  try {
    p.account = await state.client!.becomeProvider(state.userId, form);
    if (state.status) {
      p.freeCapacity = findVmEntry(state.status, form.backing_vm);
    }
  } catch (err) {
    p.serverError = asActionError(err);
  } finally {
    p.busy = false;
  }
  redraw();
}

async function registerOffer(data: FormData): Promise<void> {
  const p = state.provider;
  const kind = String(data.get("kind") ?? "compute");
  const quality: Record<string, string> = {};
  for (const line of String(data.get("quality") ?? "").split("\n")) {
    const eq = line.indexOf("=");
    if (eq > 0) quality[line.slice(0, eq).trim()] = line.slice(eq + 1).trim();
  }
  const body: Parameters<MarketClient["registerOffer"]>[0] = {
    kind,
    floor_price: String(data.get("floor_price") ?? "0"),
    cap_price: String(data.get("cap_price") ?? "0"),
    price: String(data.get("price") ?? "0"),
    quality,
  };
  if (kind === "compute") {
    body.spec = vectorFromForm(data);
  } else {
    body.size_gib = Number(data.get("size_gib") ?? 0);
  }
  p.offerError = null;
  p.offerResult = null;
  p.busy = true;
  redraw();
  try {
    p.offerResult = await state.client!.registerOffer(body);
  } catch (err) {
    p.offerError = asActionError(err);
  } finally {
    p.busy = false;
  }
  await refresh();
}

function vectorFromForm(data: FormData): ResourceVectorDoc {
  return {
    cores: Number(data.get("cores") ?? 0),
    priority: Number(data.get("priority") ?? 0),
    ram_mib: Number(data.get("ram_mib") ?? 0),
    disk_gib: Number(data.get("disk_gib") ?? 0),
    nics: Number(data.get("nics") ?? 0),
  };
}

// -- wiring ------------------------------------------------------------------------

function onClick(ev: MouseEvent): void {
  const el = (ev.target as Element).closest<HTMLElement>("[data-action]");
  if (!el || !state.client) return;
  const action = el.dataset.action;
  if (action === "select-offer") void selectOffer(el.dataset.offer!);
  else if (action === "negotiate") void negotiate(el.dataset.offer!);
  else if (action === "contract-cmd")
    void contractCommand(el.dataset.contract!, el.dataset.cmd!);
}

function onSubmit(ev: SubmitEvent): void {
  const form = ev.target as HTMLFormElement;
  const action = form.dataset.action;
  if (!action) return;
  ev.preventDefault();
  const data = new FormData(form);
  if (action === "connect") {
    state.client = new MarketClient(
      String(data.get("base") ?? "").replace(/\/$/, ""),
      String(data.get("token") ?? ""),
    );
    state.userId = String(data.get("user") ?? "");
    lastHtml.clear();
    void refresh();
  } else if (!state.client) {
    return;
  } else if (action === "rescale") {
    void contractCommand(form.dataset.contract!, "rescale", vectorFromForm(data));
  } else if (action === "become-provider") {
    void becomeProvider({
      company_name: String(data.get("company_name") ?? ""),
      tax_number: String(data.get("tax_number") ?? ""),
      bank_account: String(data.get("bank_account") ?? ""),
      postal_address: String(data.get("postal_address") ?? ""),
      backing_vm: String(data.get("backing_vm") ?? ""),
    });
  } else if (action === "register-offer") {
    void registerOffer(data);
  }
}

function onTabClick(ev: MouseEvent): void {
  const btn = (ev.target as Element).closest<HTMLButtonElement>("button[data-view]");
  if (!btn) return;
  state.view = btn.dataset.view as typeof state.view;
  redraw();
  void refresh();
}

export function start(): void {
  document.addEventListener("click", onClick);
  document.addEventListener("submit", onSubmit);
  $("tabs").addEventListener("click", onTabClick);
  redraw();
  setInterval(() => void refresh(), POLL_MS);
}

start();
