/** Deterministic RNG (splitmix64 core) for reproducible shot sampling. */

export class Rng {
  private state: bigint;

  constructor(seed: number | bigint) {
    this.state = BigInt(seed) & 0xffffffffffffffffn;
  }

  /** Next u64 via splitmix64. */
  nextU64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn;
    return z ^ (z >> 31n);
  }

  /** Uniform float in [0, 1) with 53 bits of entropy. */
  nextFloat(): number {
    return Number(this.nextU64() >> 11n) / 2 ** 53;
  }

  /** Uniform integer in [0, n). */
  nextInt(n: number): number {
    return Math.floor(this.nextFloat() * n);
  }
}

/**
 * Sample k distinct indices from [0, n) by a partial Fisher-Yates shuffle.
 * Returned in draw order; deterministic for a given rng state.
 */
export function sampleWithoutReplacement(rng: Rng, n: number, k: number): number[] {
  if (k > n) throw new Error(`cannot sample ${k} of ${n} without replacement`);
  const pool = Array.from({ length: n }, (_, i) => i);
  const out: number[] = [];
  for (let i = 0; i < k; i++) {
    const j = i + rng.nextInt(n - i);
    [pool[i], pool[j]] = [pool[j]!, pool[i]!];
    out.push(pool[i]!);
  }
  return out;
}
