// Client-side mirror of the gateway's provider-profile law: company name
// and tax number are required, plus at least one way to send money. A form
// that fails here never leaves the page; the server stays authoritative
// for everything else.

import type { ProviderFormFields } from "./types.js";

export interface ProviderFormCheck {
  ok: boolean;
  errors: Partial<Record<keyof ProviderFormFields, string>>;
}

export function validateProviderForm(f: ProviderFormFields): ProviderFormCheck {
  const errors: ProviderFormCheck["errors"] = {};
  if (!f.company_name.trim()) errors.company_name = "required";
  if (!f.tax_number.trim()) errors.tax_number = "required";
  if (!f.bank_account.trim() && !f.postal_address.trim()) {
    errors.bank_account = "give a bank account or a postal address";
  }
  if (!f.backing_vm.trim()) errors.backing_vm = "uuid of your running cloud VM";
  return { ok: Object.keys(errors).length === 0, errors };
}
