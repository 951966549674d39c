import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // The heavier suites are CPU-bound; running files one at a time keeps
    // their wall-clock budgets meaningful.
    fileParallelism: false,
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
