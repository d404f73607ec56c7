/**
 * Sidecar configuration from flags and environment.
 *
 * Flags: --port N --model NAME --device cpu|accelerator --max-batch N --dim N
 * Env:   SIDECAR_PORT, SIDECAR_MODEL, SIDECAR_DEVICE, SIDECAR_MAX_BATCH
 */

export type Device = "cpu" | "accelerator";

export interface SidecarConfig {
  port: number;
  model: string | null; // null -> built-in deterministic encoder
  device: Device;
  maxBatch: number;
  dim: number; // built-in encoder dimension
}

export class ConfigError extends Error {}

const DEFAULTS: SidecarConfig = {
  port: 8901,
  model: null,
  device: "cpu",
  maxBatch: 64,
  dim: 48,
};

export function parseConfig(
  argv: string[],
  env: Record<string, string | undefined> = {},
): SidecarConfig {
  const config = { ...DEFAULTS };
  if (env.SIDECAR_PORT) config.port = Number(env.SIDECAR_PORT);
  if (env.SIDECAR_MODEL) config.model = env.SIDECAR_MODEL;
  if (env.SIDECAR_DEVICE) config.device = env.SIDECAR_DEVICE as Device;
  if (env.SIDECAR_MAX_BATCH) config.maxBatch = Number(env.SIDECAR_MAX_BATCH);

  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = () => {
      const value = argv[++i];
      if (value === undefined) throw new ConfigError(`${flag} needs a value`);
      return value;
    };
    switch (flag) {
      case "--port":
        config.port = Number(next());
        break;
      case "--model":
        config.model = next();
        break;
      case "--device":
        config.device = next() as Device;
        break;
      case "--max-batch":
        config.maxBatch = Number(next());
        break;
      case "--dim":
        config.dim = Number(next());
        break;
      default:
        throw new ConfigError(`unknown flag ${flag}`);
    }
  }

  if (!Number.isInteger(config.port) || config.port < 1024 || config.port > 65535) {
    throw new ConfigError(`port must be in [1024, 65535], got ${config.port}`);
  }
  if (!Number.isInteger(config.maxBatch) || config.maxBatch < 1) {
    throw new ConfigError(`max batch must be >= 1, got ${config.maxBatch}`);
  }
  if (config.device !== "cpu" && config.device !== "accelerator") {
    throw new ConfigError(`device must be cpu or accelerator, got ${config.device}`);
  }
  if (!Number.isInteger(config.dim) || config.dim < 1) {
    throw new ConfigError(`dim must be a positive integer, got ${config.dim}`);
  }
  return config;
}
