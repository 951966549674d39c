import { describe, expect, it } from "vitest";

import {
  canonicalTable, fingerprint, INPUT_SIZE, LAYERS, layerByName,
  parameterCount, weightShapes,
} from "../src/arch.js";

// The runtime rejects any weight file whose embedded fingerprint differs
// from its own, so the table mirrored here must hash to the same bytes.
const RUNTIME_FINGERPRINT =
  "53d7c62854c28a8a3da039c0dda1df5e43773eca93cc609cd00f186c29c7100a";

describe("architecture table", () => {
  it("hashes to the runtime's fingerprint", () => {
    expect(fingerprint().toString("hex")).toBe(RUNTIME_FINGERPRINT);
  });

  it("counts the runtime's parameters", () => {
    expect(parameterCount()).toBe(587_403);
  });

  it("lays out 22 rows from input to mask head", () => {
    expect(LAYERS).toHaveLength(22);
    expect(LAYERS[0].name).toBe("feat_norm");
    expect(LAYERS[LAYERS.length - 1].name).toBe("mask.fc2");
    const rows = canonicalTable().split("\n");
    expect(rows[1]).toBe("stem|conv|in=2x40x32|out=16x20x16|k=3|s=2|p=1|act=relu6");
    expect(rows[rows.length - 1]).toBe("mask.fc2|fc|in=256|out=64|k=0|s=1|p=0|act=sigmoid");
  });

  it("chains layer shapes without gaps", () => {
    const trunk = LAYERS.filter((l) => l.kind === "conv" || l.kind === "depthwise");
    for (let i = 1; i < trunk.length; i++) {
      expect(trunk[i].inShape).toEqual(trunk[i - 1].outShape);
    }
  });

  it("names every tensor the runtime expects", () => {
    const shapes = weightShapes();
    expect(shapes.get("stem.w")).toEqual([16, 2, 3, 3]);
    expect(shapes.get("irb1.dw.w")).toEqual([64, 1, 3, 3]);
    expect(shapes.get("mask.fc1.w")).toEqual([256, 1920]);
    expect(shapes.get("feat_norm.scale")).toEqual([2, 40, 32]);
    const size = [...shapes.values()]
      .reduce((a, s) => a + s.reduce((x, y) => x * y, 1), 0);
    expect(size).toBe(parameterCount());
  });

  it("exposes lookups and sizes used by the trainer", () => {
    expect(INPUT_SIZE).toBe(2560);
    expect(layerByName("gate.fc").outShape).toEqual([96]);
    expect(() => layerByName("nope")).toThrow(/no layer named/);
  });
});
