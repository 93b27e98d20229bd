/**
 * SplitMix64 stream matching the engine's generator bit for bit.
 *
 * Draw n of a stream seeded with s is mix64(s + (n + 1) * GAMMA) mod 2^64;
 * child streams reseed with mix64((s ^ CHILD_SALT) + (key + 1) * GAMMA).
 */

const MASK = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const CHILD_SALT = 0x6a09e667f3bcc909n;

export function mix64(z: bigint): bigint {
  z &= MASK;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK;
  return z ^ (z >> 31n);
}

export class Rng {
  private counter = 0n;

  constructor(readonly seed: bigint) {
    this.seed = seed & MASK;
  }

  nextU64(): bigint {
    this.counter += 1n;
    return mix64((this.seed + this.counter * GAMMA) & MASK);
  }

  /** Uniform double in [0, 1) with 53 random bits; exact in both runtimes. */
  nextFloat(): number {
    return Number(this.nextU64() >> 11n) * 2 ** -53;
  }

  child(key: bigint): Rng {
    return new Rng(mix64(((this.seed ^ CHILD_SALT) + (key + 1n) * GAMMA) & MASK));
  }
}
