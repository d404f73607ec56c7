/**
 * Wire-protocol conformance: a 50-request fuzz suite plus the error paths,
 * and the self-scoring invariant computed on served vectors.
 */

import { AddressInfo } from "node:net";
import { Server } from "node:http";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { parseConfig } from "../src/config.js";
import { buildServer, EncoderState } from "../src/server.js";
import { HashEncoder } from "../src/hash-encoder.js";

const VOCABULARY = [
  "use", "treatments", "table", "in", "place", "of", "breeds", ".", "find",
  "number", "different", "dog", "id", "rows", "the", "results", "order",
  "mpg", "cylinders", "8", "year", "1980", "consider", "condition",
];

function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) | 0;
    let t = Math.imul(state ^ (state >>> 15), 1 | state);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

let server: Server;
let base: string;

beforeAll(async () => {
  const config = parseConfig(["--max-batch", "8"]);
  const state: EncoderState = { encoder: new HashEncoder(), loadError: null };
  server = buildServer(state, config);
  await new Promise<void>((resolve) => server.listen(0, resolve));
  const { port } = server.address() as AddressInfo;
  base = `http://127.0.0.1:${port}`;
});

afterAll(async () => {
  await new Promise<void>((resolve, reject) =>
    server.close((err) => (err ? reject(err) : resolve())),
  );
});

async function embed(id: string, sentences: string[][]) {
  const response = await fetch(`${base}/embed`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ id, sentences }),
  });
  return response;
}

describe("embedding wire protocol", () => {
  it("serves /health with the encoder dim", async () => {
    const response = await fetch(`${base}/health`);
    expect(response.status).toBe(200);
    const payload = await response.json();
    expect(payload).toEqual({ status: "ok", dim: 48 });
  });

  it("passes a 50-request fuzz suite", async () => {
    const random = mulberry32(20240817);
    for (let request = 0; request < 50; request++) {
      const sentenceCount = 1 + Math.floor(random() * 4);
      const sentences: string[][] = [];
      for (let s = 0; s < sentenceCount; s++) {
        const length = 1 + Math.floor(random() * 9);
        sentences.push(Array.from(
          { length },
          () => VOCABULARY[Math.floor(random() * VOCABULARY.length)],
        ));
      }
      const id = `fuzz-${request}`;
      const response = await embed(id, sentences);
      expect(response.status).toBe(200);
      const payload = await response.json();
      expect(payload.id).toBe(id);
      expect(payload.dim).toBe(48);
      expect(Array.isArray(payload.vectors)).toBe(true);
      expect(payload.vectors).toHaveLength(sentences.length);
      for (let s = 0; s < sentences.length; s++) {
        expect(payload.vectors[s]).toHaveLength(sentences[s].length);
        for (const row of payload.vectors[s]) {
          expect(row).toHaveLength(48);
          for (const value of row) {
            expect(typeof value).toBe("number");
            expect(Number.isFinite(value)).toBe(true);
            expect(value).toBe(Math.fround(value)); // binary32 exact
          }
        }
      }
    }
  });

  it("is deterministic across identical requests", async () => {
    const sentences = [["use", "treatments", "table"]];
    const first = await (await embed("a", sentences)).json();
    const second = await (await embed("b", sentences)).json();
    expect(first.vectors).toEqual(second.vectors);
  });

  it("rejects malformed bodies with 400", async () => {
    const raw = await fetch(`${base}/embed`, {
      method: "POST",
      body: "{nope",
      headers: { "Content-Type": "application/json" },
    });
    expect(raw.status).toBe(400);
    const empty = await embed("x", [[]] as unknown as string[][]);
    expect(empty.status).toBe(400);
    const noId = await fetch(`${base}/embed`, {
      method: "POST",
      body: JSON.stringify({ sentences: [["a"]] }),
      headers: { "Content-Type": "application/json" },
    });
    expect(noId.status).toBe(400);
  });

  it("refuses oversize batches with 413", async () => {
    const sentences = Array.from({ length: 9 }, () => ["tok"]);
    const response = await embed("big", sentences);
    expect(response.status).toBe(413);
  });

  it("404s unknown routes", async () => {
    const response = await fetch(`${base}/nothing`);
    expect(response.status).toBe(404);
  });

  it("upholds the self-scoring invariant to 1e-6", async () => {
    // score(T, T) with greedy max-alignment precision/recall must be 1
    const sentence = ["use", "treatments", "table", "in", "place", "of",
      "breeds", "table", "."];
    const payload = await (await embed("self", [sentence, sentence])).json();
    const [ref, cand] = payload.vectors as number[][][];
    const cosine = (u: number[], v: number[]) => {
      let dot = 0;
      let nu = 0;
      let nv = 0;
      for (let d = 0; d < u.length; d++) {
        dot += u[d] * v[d];
        nu += u[d] * u[d];
        nv += v[d] * v[d];
      }
      return dot / Math.sqrt(nu * nv);
    };
    const matrix = ref.map((u) => cand.map((v) => cosine(u, v)));
    const colMax = matrix[0].map((_, j) =>
      Math.max(...matrix.map((row) => row[j])),
    );
    const rowMax = matrix.map((row) => Math.max(...row));
    const precision = colMax.reduce((a, b) => a + b, 0) / colMax.length;
    const recall = rowMax.reduce((a, b) => a + b, 0) / rowMax.length;
    const score = (precision + recall) / 2;
    expect(Math.abs(score - 1.0)).toBeLessThanOrEqual(1e-6);
  });

  it("reports an error state when no encoder is loaded", async () => {
    const config = parseConfig([]);
    const broken = buildServer(
      { encoder: null, loadError: "cannot load model 'x'" },
      config,
    );
    await new Promise<void>((resolve) => broken.listen(0, resolve));
    const { port } = broken.address() as AddressInfo;
    const health = await (await fetch(`http://127.0.0.1:${port}/health`)).json();
    expect(health.status).toBe("error");
    expect(health.detail).toContain("cannot load model");
    const embedResponse = await fetch(`http://127.0.0.1:${port}/embed`, {
      method: "POST",
      body: JSON.stringify({ id: "x", sentences: [["a"]] }),
      headers: { "Content-Type": "application/json" },
    });
    expect(embedResponse.status).toBe(503);
    await new Promise<void>((resolve, reject) =>
      broken.close((err) => (err ? reject(err) : resolve())),
    );
  });
});
