/**
 * Deterministic weight generation. The stream is keyed by a string so the
 * same (backbone, seed) pair always produces byte-identical files.
 */

/** splitmix-style 32-bit generator, seeded from a string key. */
export class SeededRng {
  private state: number;

  constructor(key: string) {
    let h = 0x9e3779b9;
    for (let i = 0; i < key.length; i++) {
      h = Math.imul(h ^ key.charCodeAt(i), 0x85ebca6b);
      h = (h << 13) | (h >>> 19);
    }
    this.state = h >>> 0;
  }

  next(): number {
    // mulberry32
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  /** standard normal via Box-Muller */
  gaussian(): number {
    let u = 0;
    while (u === 0) u = this.next();
    const v = this.next();
    return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
  }

  /** He-scaled fan-in init, rounded to float32. */
  heWeights(count: number, fanIn: number): Float32Array {
    const std = Math.sqrt(2.0 / fanIn);
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      out[i] = Math.fround(this.gaussian() * std);
    }
    return out;
  }
}
