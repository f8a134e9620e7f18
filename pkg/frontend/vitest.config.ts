import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    environment: "node",
    // the round-trip test boots the Python gateway, give it room
    testTimeout: 120_000,
    hookTimeout: 60_000,
  },
});
