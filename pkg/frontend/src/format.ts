// Display-only helpers. Figures pass through verbatim; the only transforms
// here are escaping and layout.

import type { ErrorBody, ResourceVectorDoc } from "./types.js";

export function esc(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function fmtVector(v: ResourceVectorDoc): string {
  return `${v.cores} cores / ${v.ram_mib} MiB RAM / ${v.disk_gib} GiB disk / ${v.nics} NIC`;
}

export function fmtClock(t: number): string {
  return `t=${t.toFixed(1)}s`;
}

const DIMENSIONS = ["cores", "ram", "disk", "nics"];

// Capacity denials name the losing dimension in their detail string
// ("insufficient cores"). Pull it out so the form can highlight the field.
export function deniedDimension(error: ErrorBody): string | null {
  if (
    error.error !== "admission_denied" &&
    error.error !== "shrink_below_child_usage" &&
    error.error !== "shrink_below_used"
  ) {
    return null;
  }
  for (const word of error.detail.split(/\W+/)) {
    if (DIMENSIONS.includes(word)) return word;
  }
  return null;
}
