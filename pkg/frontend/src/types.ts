// Wire shapes of the gateway JSON API, mirrored field for field. The board
// renders these documents verbatim; nothing here is computed client-side.

export interface ResourceVectorDoc {
  cores: number;
  priority: number;
  ram_mib: number;
  disk_gib: number;
  nics: number;
}

export interface Offer {
  offer_id: string;
  provider_id: string;
  kind: string; // "compute" or "storage"
  backing_vm: string;
  floor_price: string;
  cap_price: string;
  current_price: string;
  spec: ResourceVectorDoc | null;
  size_gib: number | null;
  quality: Record<string, string>;
  listed: boolean;
}

export interface PricePoint {
  offer_id: string;
  t: number;
  price: string;
}

export interface Contract {
  contract_id: string;
  offer_id: string;
  consumer_id: string;
  provider_id: string;
  kind: string;
  agreed_price: string;
  activated_at: number;
  allocation: string;
  state: string; // ACTIVE or TERMINATED
  hours_billed: number;
}

// POST /contracts/{id}/commands with cmd=status
export interface AllocationStatus {
  contract: Contract;
  allocation: {
    uuid?: string;
    volume_id?: string;
    state: string;
    resources?: ResourceVectorDoc | null;
    size_gib?: number;
    [extra: string]: unknown;
  };
}

export interface IncomeEvent {
  t: number;
  contract_id: string;
  amount: string;
}

export interface LedgerReport {
  user_id: string;
  purchase_cost: string;
  cumulative_income: string;
  net: string;
  offset_achieved: boolean;
  income_events: IncomeEvent[];
}

export interface ProviderAccount {
  user_id: string;
  roles: string[];
  backing_vm: string | null;
}

export interface VmEntry {
  uuid: string;
  name: string;
  level: number;
  state: string;
  resources: ResourceVectorDoc;
  parent: string;
  uptime_s: number;
  owner: string | null;
  free?: ResourceVectorDoc;
  vms?: VmEntry[];
  volumes?: unknown[];
}

export interface HostEntry {
  node_id: string;
  level: number;
  capacity: ResourceVectorDoc;
  free: ResourceVectorDoc;
  vms: VmEntry[];
  volumes: unknown[];
}

export interface StatusDoc {
  now: number;
  hosts: HostEntry[];
  allocations: unknown[];
  queue: Record<string, number>;
}

// every non-2xx gateway response carries this body
export interface ErrorBody {
  error: string;
  detail: string;
}

export interface ProviderFormFields {
  company_name: string;
  tax_number: string;
  bank_account: string;
  postal_address: string;
  backing_vm: string;
}
