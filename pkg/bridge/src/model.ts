/**
 * Model loaders. A model maps a flattened [H, W, C] image to class
 * probabilities; the bridge stays agnostic of what sits behind score().
 *
 * The built-in "linear" model is the engine's fixed linear probe: weight i
 * of class k is (u - 0.5) * 8 / D where u is draw i of the child stream
 * keyed by k, reproduced here so both sides derive identical weights.
 */

import { Rng } from "./splitmix.js";

export interface Model {
  classes: number;
  input: [number, number, number];
  score(flat: Float32Array): number[];
}

function softmax(logits: number[]): number[] {
  const top = Math.max(...logits);
  const exps = logits.map((v) => Math.exp(v - top));
  const total = exps.reduce((a, b) => a + b, 0);
  return exps.map((v) => v / total);
}

export function linearModel(
  seed: bigint,
  classes: number,
  input: [number, number, number],
): Model {
  const dim = input[0] * input[1] * input[2];
  const base = new Rng(seed);
  const weights: Float64Array[] = [];
  for (let k = 0; k < classes; k++) {
    const child = base.child(BigInt(k));
    const row = new Float64Array(dim);
    for (let i = 0; i < dim; i++) {
      row[i] = (child.nextFloat() - 0.5) * 8.0 / dim;
    }
    weights.push(row);
  }
  return {
    classes,
    input,
    score(flat: Float32Array): number[] {
      if (flat.length !== dim) {
        throw new Error(`expected ${dim} values, got ${flat.length}`);
      }
      const logits = weights.map((row) => {
        let acc = 0;
        for (let i = 0; i < dim; i++) {
          acc += row[i] * flat[i];
        }
        return acc;
      });
      return softmax(logits);
    },
  };
}

export function constantModel(
  classes: number,
  input: [number, number, number],
): Model {
  return {
    classes,
    input,
    score() {
      return new Array(classes).fill(1 / classes);
    },
  };
}

/** Parse a loader spec like `linear:seed=7,classes=3,h=4,w=4,c=3`. */
export function loadModel(spec: string): Model {
  const sep = spec.indexOf(":");
  const name = sep < 0 ? spec : spec.slice(0, sep);
  const params = new Map<string, string>();
  if (sep >= 0) {
    for (const part of spec.slice(sep + 1).split(",")) {
      if (!part) continue;
      const eq = part.indexOf("=");
      if (eq < 0) {
        throw new Error(`malformed model parameter ${part}`);
      }
      params.set(part.slice(0, eq).trim(), part.slice(eq + 1).trim());
    }
  }
  const int = (key: string, fallback?: number): number => {
    const raw = params.get(key);
    if (raw === undefined) {
      if (fallback === undefined) throw new Error(`model spec needs ${key}`);
      return fallback;
    }
    const value = Number(raw);
    if (!Number.isInteger(value) || value <= 0) {
      throw new Error(`bad integer for ${key}: ${raw}`);
    }
    return value;
  };
  const input: [number, number, number] = [
    int("h", 32), int("w", 32), int("c", 3),
  ];
  if (name === "linear") {
    return linearModel(BigInt(int("seed")), int("classes"), input);
  }
  if (name === "constant") {
    return constantModel(int("classes"), input);
  }
  throw new Error(`unknown model loader ${name}`);
}
