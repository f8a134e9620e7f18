import { describe, expect, it } from "vitest";
import { GestureKeys } from "../src/keys.js";

describe("GestureKeys", () => {
  it("hands the same key back while the gesture is pending", () => {
    const keys = new GestureKeys();
    const first = keys.begin("contract-2:stop");
    expect(keys.begin("contract-2:stop")).toBe(first);
    expect(keys.isPending("contract-2:stop")).toBe(true);
  });

  it("mints a fresh key after the gesture settles", () => {
    const keys = new GestureKeys();
    const first = keys.begin("contract-2:start");
    keys.settle("contract-2:start");
    expect(keys.isPending("contract-2:start")).toBe(false);
    expect(keys.begin("contract-2:start")).not.toBe(first);
  });

  it("keeps distinct gestures apart", () => {
    const keys = new GestureKeys();
    expect(keys.begin("a:stop")).not.toBe(keys.begin("b:stop"));
  });
});
