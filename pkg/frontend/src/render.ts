// Pure view functions: gateway documents in, HTML strings out. No fetches,
// no DOM reads, no arithmetic on domain figures; the app layer owns state
// and event wiring. Keeping these pure lets the test suite assert on
// rendered markup without a browser.

import { priceChartSvg } from "./chart.js";
import { deniedDimension, esc, fmtClock, fmtVector } from "./format.js";
import type {
  AllocationStatus,
  ErrorBody,
  LedgerReport,
  Offer,
  PricePoint,
  ProviderAccount,
  ProviderFormFields,
  ResourceVectorDoc,
  StatusDoc,
} from "./types.js";

export type ActionError = ErrorBody & { status: number };

export type OfferDetailState =
  | { kind: "loading"; offerId: string }
  | { kind: "missing"; offerId: string; status: number; error: ErrorBody }
  | {
      kind: "ready";
      offer: Offer;
      points: PricePoint[];
      // the signed-in user's contract on this offer, if they hold one
      contract: AllocationStatus | null;
      busy: boolean;
      actionError: ActionError | null;
    };

export function renderErrorBanner(e: ActionError): string {
  return `<div class="banner error" data-code="${esc(e.error)}">${esc(e.error)} (${e.status}): ${esc(e.detail)}</div>`;
}

// -- offers -----------------------------------------------------------------

export function renderOfferList(offers: Offer[], selectedId: string | null): string {
  if (offers.length === 0) {
    return `<p class="empty">no offers listed</p>`;
  }
  const rows = offers
    .map((o) => {
      const what =
        o.kind === "compute" && o.spec
          ? fmtVector(o.spec)
          : o.size_gib != null
            ? `${o.size_gib} GiB volume`
            : o.kind;
      const sel = o.offer_id === selectedId ? ` class="selected"` : "";
      return (
        `<tr${sel} data-action="select-offer" data-offer="${esc(o.offer_id)}">` +
        `<td>${esc(o.offer_id)}</td><td>${esc(o.kind)}</td><td>${esc(what)}</td>` +
        `<td class="num">${esc(o.current_price)}</td><td>${esc(o.provider_id)}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="offers"><thead><tr><th>offer</th><th>kind</th><th>contents</th>` +
    `<th class="num">price/h</th><th>provider</th></tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderOfferDetail(state: OfferDetailState): string {
  if (state.kind === "loading") {
    return `<p class="empty">loading ${esc(state.offerId)}&hellip;</p>`;
  }
  if (state.kind === "missing") {
    return (
      `<div class="not-found"><h3>${esc(state.status)}</h3>` +
      `<p>${esc(state.error.error)}: ${esc(state.error.detail)}</p></div>`
    );
  }
  const o = state.offer;
  const what =
    o.kind === "compute" && o.spec
      ? fmtVector(o.spec)
      : o.size_gib != null
        ? `${o.size_gib} GiB volume`
        : o.kind;
  const quality = Object.entries(o.quality)
    .map(([k, v]) => `<tr><td>${esc(k)}</td><td>${esc(v)}</td></tr>`)
    .join("");
  const action = state.contract
    ? renderContractPanel(state.contract, {
        busy: state.busy,
        error: state.actionError,
      })
    : o.listed
      ? `<button data-action="negotiate" data-offer="${esc(o.offer_id)}"${state.busy ? " disabled" : ""}>negotiate at ${esc(o.current_price)}/h</button>` +
        (state.actionError ? renderErrorBanner(state.actionError) : "")
      : `<p class="empty">offer is delisted</p>`;
  return (
    `<article class="offer-detail" data-offer="${esc(o.offer_id)}">` +
    `<h3>${esc(o.offer_id)} <span class="muted">by ${esc(o.provider_id)}</span></h3>` +
    `<dl><dt>contents</dt><dd>${esc(what)}</dd>` +
    `<dt>price</dt><dd>${esc(o.current_price)}/h (floor ${esc(o.floor_price)}, cap ${esc(o.cap_price)})</dd>` +
    `<dt>backing cloud</dt><dd><code>${esc(o.backing_vm)}</code></dd></dl>` +
    (quality
      ? `<table class="quality"><caption>quality</caption>${quality}</table>`
      : "") +
    `<section class="chart">${priceChartSvg(state.points)}</section>` +
    `<section class="action">${action}</section></article>`
  );
}

// -- contract panel ---------------------------------------------------------

export interface PanelUi {
  busy: boolean;
  error: ActionError | null;
}

export function renderContractPanel(doc: AllocationStatus, ui: PanelUi): string {
  const c = doc.contract;
  const a = doc.allocation;
  const live = c.state === "ACTIVE";
  const off = ui.busy || !live ? " disabled" : "";
  const denied = ui.error ? deniedDimension(ui.error) : null;
  const inlineError = ui.error
    ? `<p class="inline-error"${denied ? ` data-denied="${esc(denied)}"` : ""}>` +
      `${esc(ui.error.error)} (${ui.error.status}): ${esc(ui.error.detail)}</p>`
    : "";

  let body: string;
  if (c.kind === "storage") {
    // volumes have no power state, terminate is the only gesture
    body =
      `<p>volume <code>${esc(c.allocation)}</code>, ${esc(a.size_gib ?? "?")} GiB</p>` +
      `<div class="controls"><button data-action="contract-cmd" data-contract="${esc(c.contract_id)}" data-cmd="terminate"${off}>terminate</button></div>` +
      inlineError;
  } else {
    const res = a.resources ?? null;
    const vec = res ?? { cores: 0, priority: 0, ram_mib: 0, disk_gib: 0, nics: 0 };
    body =
      `<p>allocation <code>${esc(c.allocation)}</code> is ` +
      `<span class="state state-${esc(a.state)}">${esc(a.state)}</span>` +
      (res ? `, ${esc(fmtVector(res))}` : "") +
      `</p>` +
      `<div class="controls">` +
      `<button data-action="contract-cmd" data-contract="${esc(c.contract_id)}" data-cmd="start"${off}>start</button>` +
      `<button data-action="contract-cmd" data-contract="${esc(c.contract_id)}" data-cmd="stop"${off}>stop</button>` +
      `<button data-action="contract-cmd" data-contract="${esc(c.contract_id)}" data-cmd="terminate"${off}>terminate</button>` +
      `</div>` +
      renderRescaleForm(c.contract_id, vec, denied, ui.busy || !live) +
      inlineError;
  }
  return (
    `<section class="contract-panel" data-contract="${esc(c.contract_id)}">` +
    `<h4>${esc(c.contract_id)} <span class="state state-${esc(c.state)}">${esc(c.state)}</span></h4>` +
    `<p class="muted">agreed ${esc(c.agreed_price)}/h, ${esc(c.hours_billed)} h billed</p>` +
    body +
    `</section>`
  );
}

function renderRescaleForm(
  contractId: string,
  vec: ResourceVectorDoc,
  denied: string | null,
  disabled: boolean,
): string {
  // the gateway wants the full five-dimensional vector, so every field is
  // prefilled with the allocation's current size
  const field = (name: string, label: string, value: number, dim: string | null) =>
    `<label>${esc(label)}<input name="${esc(name)}" type="number" min="0" ` +
    `value="${esc(value)}"${dim && dim === denied ? ` class="denied"` : ""}></label>`;
  return (
    `<form class="rescale" data-action="rescale" data-contract="${esc(contractId)}">` +
    `<fieldset${disabled ? " disabled" : ""}>` +
    field("cores", "cores", vec.cores, "cores") +
    field("priority", "priority", vec.priority, null) +
    field("ram_mib", "RAM MiB", vec.ram_mib, "ram") +
    field("disk_gib", "disk GiB", vec.disk_gib, "disk") +
    field("nics", "NICs", vec.nics, "nics") +
    `<button type="submit">rescale</button>` +
    `</fieldset></form>`
  );
}

// -- provider onboarding ------------------------------------------------------

export interface ProviderPageState {
  account: ProviderAccount | null;
  form: ProviderFormFields;
  fieldErrors: Partial<Record<keyof ProviderFormFields, string>>;
  serverError: ActionError | null;
  // free vector of the backing cloud, read out of GET /status
  freeCapacity: ResourceVectorDoc | null;
  offerResult: Offer | null;
  offerError: ActionError | null;
  busy: boolean;
}

export function renderProviderPage(s: ProviderPageState): string {
  if (s.account && s.account.roles.includes("provider")) {
    return renderProviderView(s);
  }
  const f = s.form;
  const err = (name: keyof ProviderFormFields) =>
    s.fieldErrors[name]
      ? `<span class="field-error" data-field="${esc(name)}">${esc(s.fieldErrors[name])}</span>`
      : "";
  const input = (name: keyof ProviderFormFields, label: string) =>
    `<label>${esc(label)}<input name="${esc(name)}" value="${esc(f[name])}">${err(name)}</label>`;
  return (
    `<form class="provider-form" data-action="become-provider">` +
    `<h3>become a provider</h3>` +
    `<fieldset${s.busy ? " disabled" : ""}>` +
    input("company_name", "company name") +
    input("tax_number", "tax number") +
    input("bank_account", "bank account") +
    input("postal_address", "postal address") +
    input("backing_vm", "backing cloud VM uuid") +
    `<button type="submit">submit profile</button>` +
    `</fieldset>` +
    (s.serverError ? renderErrorBanner(s.serverError) : "") +
    `</form>`
  );
}

function renderProviderView(s: ProviderPageState): string {
  const acct = s.account!;
  const free = s.freeCapacity
    ? `<p class="free-capacity">free on <code>${esc(acct.backing_vm ?? "")}</code>: ${esc(fmtVector(s.freeCapacity))}</p>`
    : `<p class="free-capacity muted">backing cloud capacity unknown</p>`;
  return (
    `<section class="provider-view">` +
    `<h3>provider ${esc(acct.user_id)}</h3>` +
    `<p>roles: ${acct.roles.map((r) => `<span class="role">${esc(r)}</span>`).join(" ")}</p>` +
    free +
    renderOfferRegistration(s) +
    `</section>`
  );
}

function renderOfferRegistration(s: ProviderPageState): string {
  return (
    `<form class="register-offer" data-action="register-offer">` +
    `<h4>list a new offer</h4>` +
    `<fieldset${s.busy ? " disabled" : ""}>` +
    `<label>kind<select name="kind"><option value="compute">compute</option>` +
    `<option value="storage">storage</option></select></label>` +
    `<label>floor<input name="floor_price" value="1"></label>` +
    `<label>cap<input name="cap_price" value="100"></label>` +
    `<label>price<input name="price" value="10"></label>` +
    `<label>cores<input name="cores" type="number" value="2"></label>` +
    `<label>priority<input name="priority" type="number" value="512"></label>` +
    `<label>RAM MiB<input name="ram_mib" type="number" value="2048"></label>` +
    `<label>disk GiB<input name="disk_gib" type="number" value="20"></label>` +
    `<label>NICs<input name="nics" type="number" value="1"></label>` +
    `<label>size GiB (storage)<input name="size_gib" type="number" value="50"></label>` +
    `<label>quality (k=v per line)<textarea name="quality"></textarea></label>` +
    `<button type="submit">register</button>` +
    `</fieldset>` +
    (s.offerResult
      ? `<p class="banner ok">listed ${esc(s.offerResult.offer_id)} at ${esc(s.offerResult.current_price)}/h</p>`
      : "") +
    (s.offerError ? renderErrorBanner(s.offerError) : "") +
    `</form>`
  );
}

// -- ledger -------------------------------------------------------------------

export function renderLedger(report: LedgerReport): string {
  const events = report.income_events
    .map(
      (e) =>
        `<tr><td>${esc(fmtClock(e.t))}</td><td>${esc(e.contract_id)}</td>` +
        `<td class="num">${esc(e.amount)}</td></tr>`,
    )
    .join("");
  const offset = report.offset_achieved
    ? `<span class="badge ok">cost offset achieved</span>`
    : `<span class="badge">not yet offset</span>`;
  return (
    `<section class="ledger"><h3>ledger for ${esc(report.user_id)}</h3>` +
    `<dl><dt>purchase cost</dt><dd>${esc(report.purchase_cost)}</dd>` +
    `<dt>cumulative income</dt><dd>${esc(report.cumulative_income)}</dd>` +
    `<dt>net</dt><dd>${esc(report.net)} ${offset}</dd></dl>` +
    (events
      ? `<table class="income"><thead><tr><th>when</th><th>contract</th><th class="num">amount</th></tr></thead><tbody>${events}</tbody></table>`
      : `<p class="empty">no income recorded</p>`) +
    `</section>`
  );
}

// -- status strip ---------------------------------------------------------------

export function renderStatusStrip(status: StatusDoc | null): string {
  if (!status) return `<span class="muted">gateway unreachable</span>`;
  const vms = status.hosts.reduce((n, h) => n + h.vms.length, 0);
  return (
    `<span>${esc(fmtClock(status.now))}</span> <span>${status.hosts.length} host(s)</span> ` +
    `<span>${vms} top-level VM(s)</span> <span>queue acked ${esc(status.queue.acked ?? 0)}</span>`
  );
}

// recursive lookup of one VM entry in the status tree, for the provider
// view's free-capacity line
export function findVmEntry(status: StatusDoc, uuid: string): ResourceVectorDoc | null {
  interface Node {
    uuid?: string;
    free?: ResourceVectorDoc;
    vms?: Node[];
  }
  const stack: Node[] = [...status.hosts];
  while (stack.length) {
    const node = stack.pop()!;
    if (node.uuid === uuid) return node.free ?? null;
    for (const child of node.vms ?? []) stack.push(child);
  }
  return null;
}
