// UiState and its reducer. Every UI change is an event folded through
// reduce(); the functions are pure, so replaying a recorded event log
// reproduces the exact same sequence of states.

import type { Mode, ModelInfo, Prediction, ServerMessage } from "./protocol.js";

export const HISTORY_LIMIT = 300;

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

export type UiState = {
  connection: ConnectionStatus;
  /** Last mode the server acknowledged — the only mode ever displayed. */
  mode: Mode;
  /** Requested but not yet acknowledged; shown as "switching…", never as current. */
  pendingMode: Mode | null;
  latest: Prediction | null;
  /** Newest HISTORY_LIMIT predictions of the current session, ordered by t. */
  history: readonly Prediction[];
  info: ModelInfo | null;
  lastError: string | null;
};

export type UiEvent =
  | { kind: "connecting" }
  | { kind: "open" }
  | { kind: "closed" }
  | { kind: "info"; info: ModelInfo }
  | { kind: "mode_requested"; mode: Mode }
  | { kind: "server"; message: ServerMessage };

export function initialState(): UiState {
  return {
    connection: "disconnected",
    mode: "off",
    pendingMode: null,
    latest: null,
    history: [],
    info: null,
    lastError: null,
  };
}

function applyServer(state: UiState, message: ServerMessage): UiState {
  switch (message.type) {
    case "prediction": {
      const last = state.history[state.history.length - 1];
      if (last && message.t <= last.t) return state; // keep history ordered by t
      const history = [...state.history, message].slice(-HISTORY_LIMIT);
      return { ...state, latest: message, history };
    }
    case "mode_ack":
      return {
        ...state,
        mode: message.mode,
        pendingMode: state.pendingMode === message.mode ? null : state.pendingMode,
      };
    case "error":
      return { ...state, lastError: message.message };
  }
}

export function reduce(state: UiState, event: UiEvent): UiState {
  switch (event.kind) {
    case "connecting":
      return { ...state, connection: "connecting" };
    case "open":
      // a fresh stream session: the server starts it in "off" at t=0
      return {
        ...state,
        connection: "connected",
        mode: "off",
        pendingMode: null,
        latest: null,
        history: [],
        lastError: null,
      };
    case "closed":
      return { ...state, connection: "disconnected", pendingMode: null };
    case "info":
      return { ...state, info: event.info };
    case "mode_requested":
      return { ...state, pendingMode: event.mode };
    case "server":
      return applyServer(state, event.message);
  }
}

/** Fold a recorded log into every intermediate state (index 0 = initial). */
export function replay(events: readonly UiEvent[]): UiState[] {
  const states = [initialState()];
  for (const event of events) {
    states.push(reduce(states[states.length - 1]!, event));
  }
  return states;
}
