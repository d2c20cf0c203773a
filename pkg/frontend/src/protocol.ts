// Message contract of the serving process: GET /model/info plus the
// full-duplex /stream channel. Nothing else is consumed.

export const MODES = ["off", "low", "medium", "high"] as const;
export type Mode = (typeof MODES)[number];

export type Prediction = {
  type: "prediction";
  t: number;
  class: number;
  label: string;
  mode: Mode;
  epsilon: number | null;
  latency_ms: number;
};

export type ModeAck = {
  type: "mode_ack";
  mode: Mode;
};

export type ServerError = {
  type: "error";
  message: string;
};

export type ServerMessage = Prediction | ModeAck | ServerError;

/** The only message this client ever sends upstream. */
export type SetModeMessage = {
  type: "set_mode";
  mode: Mode;
};

export type ModelInfo = {
  feature_names: string[];
  class_names: string[];
  severity_labels: Record<string, string>;
  modes: string[];
  privacy_levels: Record<string, number>;
  selected_features: number[] | null;
  models: Record<string, { arch: string; input_dim: number; class_count: number }>;
  fps: number;
};

export function isMode(value: unknown): value is Mode {
  return typeof value === "string" && (MODES as readonly string[]).includes(value);
}

function isPrediction(msg: Record<string, unknown>): msg is Prediction {
  return (
    typeof msg.t === "number" &&
    typeof msg.class === "number" &&
    typeof msg.label === "string" &&
    isMode(msg.mode) &&
    (msg.epsilon === null || typeof msg.epsilon === "number") &&
    typeof msg.latency_ms === "number"
  );
}

/** Parse one frame off the wire; null for anything malformed (never throws). */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const msg = data as Record<string, unknown>;
  switch (msg.type) {
    case "prediction":
      return isPrediction(msg) ? (msg as Prediction) : null;
    case "mode_ack":
      return isMode(msg.mode) ? { type: "mode_ack", mode: msg.mode } : null;
    case "error":
      return typeof msg.message === "string"
        ? { type: "error", message: msg.message }
        : null;
    default:
      return null;
  }
}

export function encodeSetMode(mode: Mode): string {
  const msg: SetModeMessage = { type: "set_mode", mode };
  return JSON.stringify(msg);
}
