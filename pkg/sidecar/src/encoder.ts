/**
 * Encoder contract: sentence-level contextual subword vectors.
 *
 * A sentence comes in as whitespace tokens; the encoder applies its own
 * subword tokenization internally. `encodeSentence` returns one matrix per
 * token holding the contextual vector of each of its subwords, so callers
 * can pool subwords back to token granularity.
 */

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  /** Subword units of a single whitespace token. */
  subwords(token: string): string[];
  /** Contextual subword vectors: result[i][j] = vector of subword j of token i. */
  encodeSentence(tokens: string[]): number[][][];
}

export class EncoderError extends Error {}
