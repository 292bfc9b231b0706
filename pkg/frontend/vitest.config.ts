import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    testTimeout: 90_000, // the integration test boots a real service
    hookTimeout: 90_000,
  },
});
