/**
 * HTTP surface: the embedding wire protocol.
 *
 *   POST /embed  {"id": str, "sentences": [[token, ...], ...]}
 *            ->  {"id": str, "dim": int, "vectors": [[[f32 x dim] x tokens] x sentences]}
 *   GET  /health ->  {"status": "ok", "dim": int} | {"status": "error", "detail": str}
 *
 * The service is stateless (clients own caching); requests over the batch
 * limit are refused with 413.
 */

import { createServer, IncomingMessage, Server, ServerResponse } from "node:http";

import { Encoder } from "./encoder.js";
import { SidecarConfig } from "./config.js";
import { meanPool, toFloat32 } from "./pooling.js";
import { TransformersEncoder } from "./transformers-encoder.js";

export interface EncoderState {
  encoder: Encoder | null;
  loadError: string | null;
}

function sendJson(response: ServerResponse, status: number, payload: unknown): void {
  const body = JSON.stringify(payload);
  response.writeHead(status, {
    "Content-Type": "application/json",
    "Content-Length": Buffer.byteLength(body),
  });
  response.end(body);
}

function readBody(request: IncomingMessage): Promise<string> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    request.on("data", (chunk) => chunks.push(chunk));
    request.on("end", () => resolve(Buffer.concat(chunks).toString("utf-8")));
    request.on("error", reject);
  });
}

interface EmbedRequest {
  id: string;
  sentences: string[][];
}

function validateEmbedRequest(payload: unknown): EmbedRequest {
  if (typeof payload !== "object" || payload === null) {
    throw new Error("request body must be a JSON object");
  }
  const { id, sentences } = payload as { id?: unknown; sentences?: unknown };
  if (typeof id !== "string") throw new Error("'id' must be a string");
  if (!Array.isArray(sentences) || sentences.length === 0) {
    throw new Error("'sentences' must be a non-empty array");
  }
  for (const sentence of sentences) {
    if (!Array.isArray(sentence) || sentence.length === 0) {
      throw new Error("every sentence must be a non-empty token array");
    }
    for (const token of sentence) {
      if (typeof token !== "string" || token.length === 0) {
        throw new Error("tokens must be non-empty strings");
      }
    }
  }
  return { id, sentences: sentences as string[][] };
}

async function encodePooled(encoder: Encoder, tokens: string[]): Promise<number[][]> {
  const perToken = encoder instanceof TransformersEncoder
    ? await encoder.encodeSentenceAsync(tokens)
    : encoder.encodeSentence(tokens);
  return perToken.map((rows) => toFloat32(meanPool(rows)));
}

export function buildServer(state: EncoderState, config: SidecarConfig): Server {
  return createServer(async (request, response) => {
    try {
      if (request.method === "GET" && request.url === "/health") {
        if (state.encoder === null) {
          sendJson(response, 200, {
            status: "error",
            detail: state.loadError ?? "encoder not loaded",
          });
          return;
        }
        sendJson(response, 200, { status: "ok", dim: state.encoder.dim });
        return;
      }
      if (request.method === "POST" && request.url === "/embed") {
        if (state.encoder === null) {
          sendJson(response, 503, {
            error: state.loadError ?? "encoder not loaded",
          });
          return;
        }
        let parsed: EmbedRequest;
        try {
          parsed = validateEmbedRequest(JSON.parse(await readBody(request)));
        } catch (error) {
          sendJson(response, 400, { error: String(error) });
          return;
        }
        if (parsed.sentences.length > config.maxBatch) {
          sendJson(response, 413, {
            error: `batch of ${parsed.sentences.length} sentences exceeds ` +
              `the limit of ${config.maxBatch}`,
          });
          return;
        }
        const vectors: number[][][] = [];
        for (const sentence of parsed.sentences) {
          vectors.push(await encodePooled(state.encoder, sentence));
        }
        sendJson(response, 200, {
          id: parsed.id,
          dim: state.encoder.dim,
          vectors,
        });
        return;
      }
      sendJson(response, 404, { error: `no route for ${request.method} ${request.url}` });
    } catch (error) {
      sendJson(response, 500, { error: String(error) });
    }
  });
}
