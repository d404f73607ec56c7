/**
 * Optional pretrained encoder backend.
 *
 * Loaded dynamically so the sidecar has no hard dependency on the model
 * runtime: install `@huggingface/transformers` and pass --model to serve a
 * real contextual encoder. Weights must be available locally or
 * downloadable; any load failure is surfaced through /health as an error
 * state rather than crashing the service.
 */

import { Encoder, EncoderError } from "./encoder.js";
import { Device } from "./config.js";

interface FeatureExtractor {
  tokenizer: {
    tokenize(text: string): string[];
  };
  (text: string, options: { pooling: "none" }): Promise<{
    dims: number[];
    data: Float32Array;
  }>;
}

class TransformersEncoder implements Encoder {
  readonly name: string;
  readonly dim: number;
  private readonly extractor: FeatureExtractor;

  constructor(name: string, dim: number, extractor: FeatureExtractor) {
    this.name = name;
    this.dim = dim;
    this.extractor = extractor;
  }

  subwords(token: string): string[] {
    const pieces = this.extractor.tokenizer.tokenize(token);
    return pieces.length > 0 ? pieces : [token];
  }

  encodeSentence(_tokens: string[]): number[][][] {
    throw new EncoderError(
      "pretrained backend is asynchronous; use encodeSentenceAsync",
    );
  }

  async encodeSentenceAsync(tokens: string[]): Promise<number[][][]> {
    const counts = tokens.map((token) => this.subwords(token).length);
    const output = await this.extractor(tokens.join(" "), { pooling: "none" });
    const [, sequenceLength, dim] = output.dims.length === 3
      ? output.dims
      : [1, output.dims[0], output.dims[1]];
    const rows: number[][] = [];
    for (let i = 0; i < sequenceLength; i++) {
      rows.push(Array.from(output.data.slice(i * dim, (i + 1) * dim)));
    }
    // drop special tokens ([CLS]/[BOS] head, [SEP]/[EOS] tail) when present
    const expected = counts.reduce((a, b) => a + b, 0);
    let body = rows;
    if (rows.length === expected + 2) body = rows.slice(1, -1);
    else if (rows.length === expected + 1) body = rows.slice(1);
    if (body.length !== expected) {
      throw new EncoderError(
        `subword count mismatch: model produced ${body.length}, expected ${expected}`,
      );
    }
    const grouped: number[][][] = [];
    let cursor = 0;
    for (const count of counts) {
      grouped.push(body.slice(cursor, cursor + count));
      cursor += count;
    }
    return grouped;
  }
}

// resolved at runtime only, so the sidecar builds without the model runtime
const TRANSFORMERS_MODULE = "@huggingface/transformers";

export async function loadTransformersEncoder(
  model: string,
  device: Device,
): Promise<TransformersEncoder> {
  let pipeline;
  try {
    ({ pipeline } = await import(TRANSFORMERS_MODULE));
  } catch (error) {
    throw new EncoderError(
      `${TRANSFORMERS_MODULE} is not installed: ${String(error)}`,
    );
  }
  let extractor: FeatureExtractor;
  try {
    extractor = (await pipeline("feature-extraction", model, {
      device: device === "accelerator" ? "gpu" : "cpu",
    })) as unknown as FeatureExtractor;
  } catch (error) {
    throw new EncoderError(`cannot load model '${model}': ${String(error)}`);
  }
  const probe = await extractor("probe", { pooling: "none" });
  const dim = probe.dims[probe.dims.length - 1];
  return new TransformersEncoder(model, dim, extractor);
}

export { TransformersEncoder };
