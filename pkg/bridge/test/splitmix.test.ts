import { describe, expect, it } from "vitest";

import { Rng, mix64 } from "../src/splitmix.js";

describe("splitmix64", () => {
  it("matches the published reference outputs for seed 0", () => {
    const r = new Rng(0n);
    expect(r.nextU64()).toBe(0xe220a8397b1dcdafn);
    expect(r.nextU64()).toBe(0x6e789e6aa1b965f4n);
    expect(r.nextU64()).toBe(0x06c45d188009454fn);
  });

  it("is a pure function of seed and counter", () => {
    const a = new Rng(0xdecafbadn);
    const b = new Rng(0xdecafbadn);
    for (let i = 0; i < 50; i++) {
      expect(a.nextU64()).toBe(b.nextU64());
    }
  });

  it("mixes to 64 bits", () => {
    expect(mix64(0n)).toBe(0n);
    const v = mix64(123456789n);
    expect(v >= 0n && v < 1n << 64n).toBe(true);
  });

  it("floats live in [0, 1) and reproduce across instances", () => {
    const r = new Rng(7n);
    for (let i = 0; i < 200; i++) {
      const f = r.nextFloat();
      expect(f).toBeGreaterThanOrEqual(0);
      expect(f).toBeLessThan(1);
    }
  });

  it("children derived from the same key agree and differ across keys", () => {
    const base = new Rng(77n);
    const c0 = base.child(0n);
    const c0Again = new Rng(77n).child(0n);
    const c1 = base.child(1n);
    const s0 = [c0.nextU64(), c0.nextU64()];
    expect([c0Again.nextU64(), c0Again.nextU64()]).toEqual(s0);
    expect([c1.nextU64(), c1.nextU64()]).not.toEqual(s0);
  });
});
