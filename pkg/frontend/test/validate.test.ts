import { describe, expect, it } from "vitest";
import { validateProviderForm } from "../src/validate.js";

const complete = {
  company_name: "Slice Works",
  tax_number: "DE-123",
  bank_account: "IBAN-77",
  postal_address: "",
  backing_vm: "ab".repeat(16),
};

describe("validateProviderForm", () => {
  it("passes a complete profile", () => {
    const check = validateProviderForm(complete);
    expect(check.ok).toBe(true);
    expect(check.errors).toEqual({});
  });

  it("flags a missing tax number on that field alone", () => {
    const check = validateProviderForm({ ...complete, tax_number: "  " });
    expect(check.ok).toBe(false);
    expect(check.errors.tax_number).toBe("required");
    expect(check.errors.company_name).toBeUndefined();
  });

  it("accepts a postal address in place of a bank account", () => {
    const check = validateProviderForm({
      ...complete,
      bank_account: "",
      postal_address: "1 Cloud Way",
    });
    expect(check.ok).toBe(true);
  });

  it("wants at least one way to send money", () => {
    const check = validateProviderForm({
      ...complete,
      bank_account: "",
      postal_address: "",
    });
    expect(check.ok).toBe(false);
    expect(check.errors.bank_account).toMatch(/bank account or a postal address/);
  });

  it("requires the backing VM uuid", () => {
    const check = validateProviderForm({ ...complete, backing_vm: "" });
    expect(check.ok).toBe(false);
    expect(check.errors.backing_vm).toBeTruthy();
  });
});
