// Thin fetch client for the gateway. One method per endpoint, no caching,
// no retries; the app layer decides when to re-ask.

import type {
  AllocationStatus,
  Contract,
  ErrorBody,
  LedgerReport,
  Offer,
  PricePoint,
  ProviderAccount,
  ProviderFormFields,
  ResourceVectorDoc,
  StatusDoc,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string,
  ) {
    super(`${code} (${status}): ${detail}`);
    this.name = "ApiError";
  }

  get body(): ErrorBody {
    return { error: this.code, detail: this.detail };
  }
}

export class MarketClient {
  constructor(
    public base: string,
    public token: string,
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<any> {
    const resp = await fetch(this.base + path, {
      method,
      headers: {
        authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { "content-type": "application/json" } : {}),
      },
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const text = await resp.text();
    let doc: any = null;
    try {
      doc = text ? JSON.parse(text) : null;
    } catch {
      doc = null;
    }
    if (!resp.ok) {
      throw new ApiError(
        resp.status,
        doc?.error ?? "error",
        doc?.detail ?? text.slice(0, 200),
      );
    }
    return doc;
  }

  status(): Promise<StatusDoc> {
    return this.request("GET", "/status");
  }

  advanceClock(seconds: number): Promise<{ now: number }> {
    return this.request("POST", "/clock/advance", { seconds });
  }

  async offers(kind?: string): Promise<Offer[]> {
    const q = kind ? `?kind=${encodeURIComponent(kind)}` : "";
    const doc = await this.request("GET", `/offers${q}`);
    return doc.offers;
  }

  registerOffer(body: {
    kind: string;
    floor_price: string;
    cap_price: string;
    price: string;
    spec?: ResourceVectorDoc;
    size_gib?: number;
    quality?: Record<string, string>;
  }): Promise<Offer> {
    return this.request("POST", "/offers", body);
  }

  async prices(offerId: string, from?: number, to?: number): Promise<PricePoint[]> {
    const params = new URLSearchParams();
    if (from !== undefined) params.set("from", String(from));
    if (to !== undefined) params.set("to", String(to));
    const q = params.size ? `?${params}` : "";
    const doc = await this.request("GET", `/offers/${offerId}/prices${q}`);
    return doc.points;
  }

  negotiate(offerId: string): Promise<Contract> {
    return this.request("POST", "/contracts", { offer_id: offerId });
  }

  contract(contractId: string): Promise<Contract> {
    return this.request("GET", `/contracts/${contractId}`);
  }

  // cmd=status reads; start/stop/rescale/terminate mutate and must carry the
  // gesture's idempotency key
  contractCommand(
    contractId: string,
    cmd: string,
    opts: { resources?: ResourceVectorDoc; idempotencyKey?: string } = {},
  ): Promise<any> {
    return this.request("POST", `/contracts/${contractId}/commands`, {
      cmd,
      resources: opts.resources,
      idempotency_key: opts.idempotencyKey,
    });
  }

  allocationStatus(contractId: string): Promise<AllocationStatus> {
    return this.contractCommand(contractId, "status");
  }

  becomeProvider(userId: string, form: ProviderFormFields): Promise<ProviderAccount> {
    return this.request("POST", `/users/${userId}/provider`, {
      company_name: form.company_name,
      tax_number: form.tax_number,
      bank_account: form.bank_account || null,
      postal_address: form.postal_address || null,
      backing_vm: form.backing_vm,
    });
  }

  ledger(userId: string): Promise<LedgerReport> {
    return this.request("GET", `/users/${userId}/ledger`);
  }
}
