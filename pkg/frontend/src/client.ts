// Connection management around the reducer: open the stream, fetch
// /model/info once, forward events, reconnect with backoff after drops.
// The transport and timers are injected so tests can script a mock server.

import { encodeSetMode, parseServerMessage } from "./protocol.js";
import type { Mode, ModelInfo } from "./protocol.js";
import { initialState, reduce } from "./state.js";
import type { UiEvent, UiState } from "./state.js";

/** Minimal full-duplex channel; a browser WebSocket satisfies it via adapter. */
export interface Transport {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((data: string) => void) | null;
  onclose: (() => void) | null;
}

export type TransportFactory = (url: string) => Transport;
export type InfoFetcher = (url: string) => Promise<ModelInfo>;
export type Scheduler = (fn: () => void, ms: number) => void;

export type ClientOptions = {
  /** e.g. "http://localhost:8000" */
  baseUrl: string;
  transport: TransportFactory;
  fetchInfo: InfoFetcher;
  schedule?: Scheduler;
  /** Reconnect delays in ms; the last entry repeats. */
  backoffMs?: readonly number[];
};

export type StateListener = (state: UiState, event: UiEvent) => void;

const DEFAULT_BACKOFF = [250, 500, 1000, 2000, 5000] as const;

export function streamUrl(baseUrl: string): string {
  return baseUrl.replace(/^http/, "ws").replace(/\/$/, "") + "/stream";
}

export class DashboardClient {
  private state: UiState = initialState();
  private readonly log: UiEvent[] = [];
  private readonly listeners: StateListener[] = [];
  private transport: Transport | null = null;
  private attempts = 0;
  private stopped = false;

  constructor(private readonly opts: ClientOptions) {}

  getState(): UiState {
    return this.state;
  }

  /** Every event dispatched so far; replay()ing it reproduces this.state. */
  eventLog(): readonly UiEvent[] {
    return this.log;
  }

  subscribe(listener: StateListener): void {
    this.listeners.push(listener);
  }

  private dispatch(event: UiEvent): void {
    this.state = reduce(this.state, event);
    this.log.push(event);
    for (const listener of this.listeners) listener(this.state, event);
  }

  async connect(): Promise<void> {
    if (this.stopped) return;
    this.dispatch({ kind: "connecting" });
    if (this.state.info === null) {
      try {
        const info = await this.opts.fetchInfo(this.opts.baseUrl + "/model/info");
        this.dispatch({ kind: "info", info });
      } catch {
        this.dispatch({ kind: "closed" });
        this.scheduleReconnect();
        return;
      }
    }
    this.openTransport();
  }

  private openTransport(): void {
    let transport: Transport;
    try {
      transport = this.opts.transport(streamUrl(this.opts.baseUrl));
    } catch {
      this.dispatch({ kind: "closed" });
      this.scheduleReconnect();
      return;
    }
    transport.onopen = () => {
      this.attempts = 0;
      this.dispatch({ kind: "open" });
    };
    transport.onmessage = (raw) => {
      const message = parseServerMessage(raw);
      if (message) this.dispatch({ kind: "server", message });
    };
    transport.onclose = () => {
      this.transport = null;
      this.dispatch({ kind: "closed" });
      this.scheduleReconnect();
    };
    this.transport = transport;
  }

  /**
   * Ask the server to switch modes. The indicator stays on the current mode
   * until the matching mode_ack arrives; disconnected clients send nothing.
   */
  setPrivacyLevel(mode: Mode): void {
    if (!this.transport || this.state.connection !== "connected") return;
    try {
      this.transport.send(encodeSetMode(mode));
    } catch {
      return;
    }
    this.dispatch({ kind: "mode_requested", mode });
  }

  close(): void {
    this.stopped = true;
    this.transport?.close();
    this.transport = null;
  }

  private scheduleReconnect(): void {
    if (this.stopped) return;
    const backoff = this.opts.backoffMs ?? DEFAULT_BACKOFF;
    const delay = backoff[Math.min(this.attempts, backoff.length - 1)] ?? 1000;
    this.attempts += 1;
    const schedule = this.opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    schedule(() => {
      if (!this.stopped) void this.connect();
    }, delay);
  }
}
