import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // The blind-run test boots the real eval service in a subprocess and
    // walks a whole session over HTTP, so give it room.
    testTimeout: 120_000,
    hookTimeout: 60_000,
  },
});
