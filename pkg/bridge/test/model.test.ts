import { describe, expect, it } from "vitest";

import { linearModel, loadModel } from "../src/model.js";
import { Rng } from "../src/splitmix.js";

// Reference values computed by the engine's in-process linear probe with
// seed 7, 3 classes, 4x4x3 input.
const ENGINE_W0_HEAD = [
  -0.03743887454920911, 0.05576675185775241,
  0.035740287828609295, 0.0661739852949304,
];
const ENGINE_W2_TAIL = [0.06720998449339594, -0.027456945013094702];

describe("linear probe model", () => {
  it("derives the exact same weights as the engine", () => {
    const base = new Rng(7n);
    const row0 = base.child(0n);
    for (let i = 0; i < 4; i++) {
      const w = (row0.nextFloat() - 0.5) * 8.0 / 48;
      expect(w).toBeCloseTo(ENGINE_W0_HEAD[i], 14);
    }
    const row2 = base.child(2n);
    const all: number[] = [];
    for (let i = 0; i < 48; i++) {
      all.push((row2.nextFloat() - 0.5) * 8.0 / 48);
    }
    expect(all[46]).toBeCloseTo(ENGINE_W2_TAIL[0], 14);
    expect(all[47]).toBeCloseTo(ENGINE_W2_TAIL[1], 14);
  });

  it("returns a probability vector", () => {
    const model = linearModel(9n, 4, [2, 2, 1]);
    const probs = model.score(new Float32Array([0.2, 0.8, 0.1, 0.9]));
    const total = probs.reduce((a, b) => a + b, 0);
    expect(total).toBeCloseTo(1.0, 9);
    probs.forEach((p) => expect(p).toBeGreaterThan(0));
  });

  it("rejects wrong input sizes", () => {
    const model = linearModel(9n, 2, [2, 2, 1]);
    expect(() => model.score(new Float32Array(5))).toThrow(/expected 4/);
  });

  it("parses loader specs", () => {
    const model = loadModel("linear:seed=7,classes=3,h=4,w=4,c=3");
    expect(model.classes).toBe(3);
    expect(model.input).toEqual([4, 4, 3]);
    expect(() => loadModel("bogus:seed=1")).toThrow(/unknown model/);
    expect(() => loadModel("linear:classes=3")).toThrow(/seed/);
  });

  it("constant model is uniform", () => {
    const model = loadModel("constant:classes=4,h=2,w=2,c=1");
    expect(model.score(new Float32Array(4))).toEqual([0.25, 0.25, 0.25, 0.25]);
  });
});
