/**
 * Built-in deterministic contextual encoder.
 *
 * Subwords are fixed-width character chunks; each subword maps to a
 * hash-seeded unit vector, then neighbouring subwords across the whole
 * sentence are mixed in, which makes the representation contextual while
 * staying a pure function of the sentence. No weights are downloaded.
 */

import { Encoder } from "./encoder.js";

const CHUNK = 4;
const NEIGHBOR_WEIGHT = 0.25;

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193);
  }
  return hash >>> 0;
}

/** Deterministic PRNG (mulberry32). */
function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) | 0;
    let t = Math.imul(state ^ (state >>> 15), 1 | state);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function normalize(vector: number[]): number[] {
  const norm = Math.sqrt(vector.reduce((acc, x) => acc + x * x, 0));
  return vector.map((x) => x / norm);
}

export class HashEncoder implements Encoder {
  readonly name = "hash-context";
  readonly dim: number;
  private readonly base = new Map<string, number[]>();

  constructor(dim = 48) {
    this.dim = dim;
  }

  subwords(token: string): string[] {
    if (token.length === 0) return [token];
    const parts: string[] = [];
    for (let i = 0; i < token.length; i += CHUNK) {
      parts.push(token.slice(i, i + CHUNK));
    }
    return parts;
  }

  private baseVector(subword: string): number[] {
    const cached = this.base.get(subword);
    if (cached) return cached;
    const random = mulberry32(fnv1a(subword));
    const vector: number[] = new Array(this.dim);
    for (let d = 0; d < this.dim; d++) {
      // Box-Muller gaussian for isotropic directions
      const u = Math.max(random(), 1e-12);
      const v = random();
      vector[d] = Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
    }
    const unit = normalize(vector);
    this.base.set(subword, unit);
    return unit;
  }

  encodeSentence(tokens: string[]): number[][][] {
    const flat: number[][] = [];
    const spans: Array<[number, number]> = [];
    for (const token of tokens) {
      const start = flat.length;
      for (const subword of this.subwords(token)) {
        flat.push(this.baseVector(subword));
      }
      spans.push([start, flat.length]);
    }
    const mixed = flat.map((vector, index) => {
      const out = vector.slice();
      const left = flat[index - 1];
      const right = flat[index + 1];
      for (let d = 0; d < this.dim; d++) {
        if (left) out[d] += NEIGHBOR_WEIGHT * left[d];
        if (right) out[d] += NEIGHBOR_WEIGHT * right[d];
      }
      return normalize(out);
    });
    return spans.map(([start, end]) => mixed.slice(start, end));
  }
}
