#!/usr/bin/env node
/** Entry point: pick an encoder backend, start the service. */

import { ConfigError, parseConfig } from "./config.js";
import { EncoderState, buildServer } from "./server.js";
import { HashEncoder } from "./hash-encoder.js";
import { loadTransformersEncoder } from "./transformers-encoder.js";

async function main(): Promise<void> {
  let config;
  try {
    config = parseConfig(process.argv.slice(2), process.env);
  } catch (error) {
    if (error instanceof ConfigError) {
      console.error(`config error: ${error.message}`);
      process.exit(64);
    }
    throw error;
  }

  const state: EncoderState = { encoder: null, loadError: null };
  if (config.model) {
    try {
      state.encoder = await loadTransformersEncoder(config.model, config.device);
    } catch (error) {
      // keep serving: /health reports the error state
      state.loadError = String(error);
    }
  } else {
    state.encoder = new HashEncoder(config.dim);
  }

  const server = buildServer(state, config);
  server.listen(config.port, () => {
    const backend = state.encoder
      ? `${state.encoder.name} (dim ${state.encoder.dim})`
      : `error: ${state.loadError}`;
    console.log(`sidecar listening on :${config.port} with ${backend}`);
  });
}

main().catch((error) => {
  console.error(error);
  process.exit(1);
});
