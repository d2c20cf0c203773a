// DOM projection of UiState. Rendering is write-only: nothing here feeds
// back into state, so the panel shown is always a function of the state.

import { MODES } from "./protocol.js";
import { epsilonDisplay, severityColor } from "./severity.js";
import type { UiState } from "./state.js";
import { HISTORY_LIMIT } from "./state.js";

export type PanelElements = {
  status: HTMLElement;
  modeButtons: Map<string, HTMLButtonElement>;
  modeIndicator: HTMLElement;
  epsilon: HTMLElement;
  severityBar: HTMLElement;
  severityLabel: HTMLElement;
  latency: HTMLElement;
  chart: HTMLCanvasElement;
};

const STATUS_TEXT: Record<UiState["connection"], string> = {
  connecting: "connecting…",
  connected: "live",
  disconnected: "disconnected — retrying",
};

export function render(state: UiState, els: PanelElements): void {
  els.status.textContent = STATUS_TEXT[state.connection];
  els.status.className = `status status-${state.connection}`;

  const connected = state.connection === "connected";
  for (const [mode, button] of els.modeButtons) {
    button.disabled = !connected;
    button.classList.toggle("active", mode === state.mode);
    button.classList.toggle("pending", mode === state.pendingMode);
  }
  els.modeIndicator.textContent =
    state.pendingMode !== null
      ? `${state.mode} (switching to ${state.pendingMode}…)`
      : state.mode;

  els.epsilon.textContent = epsilonDisplay(state.mode, state.info?.privacy_levels);

  if (state.latest) {
    const color = severityColor(state.latest.label);
    els.severityBar.className = `severity-bar severity-${color}`;
    els.severityLabel.textContent = state.latest.label;
    els.latency.textContent = `${state.latest.latency_ms.toFixed(2)} ms`;
  } else {
    els.severityBar.className = "severity-bar severity-idle";
    els.severityLabel.textContent = "—";
    els.latency.textContent = "—";
  }

  drawHistory(state, els.chart);
}

function drawHistory(state: UiState, canvas: HTMLCanvasElement): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  if (state.history.length === 0) return;

  const classCount = state.info?.class_names.length ?? 4;
  const x = (i: number) => (i / Math.max(HISTORY_LIMIT - 1, 1)) * (width - 8) + 4;
  const y = (cls: number) => height - 6 - (cls / Math.max(classCount - 1, 1)) * (height - 12);

  ctx.lineWidth = 1.5;
  ctx.strokeStyle = "#7aa2c4";
  ctx.beginPath();
  state.history.forEach((p, i) => {
    if (i === 0) ctx.moveTo(x(i), y(p.class));
    else ctx.lineTo(x(i), y(p.class));
  });
  ctx.stroke();

  const colorHex: Record<string, string> = {
    gray: "#9e9e9e", green: "#2e7d32", yellow: "#f9a825", red: "#c62828",
  };
  state.history.forEach((p, i) => {
    ctx.fillStyle = colorHex[severityColor(p.label)] ?? "#9e9e9e";
    ctx.fillRect(x(i) - 1, y(p.class) - 1, 2.5, 2.5);
  });
}

/** Collect the panel's elements by id; throws early if the page is malformed. */
export function bindPanel(root: Document): PanelElements {
  const get = (id: string): HTMLElement => {
    const el = root.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el;
  };
  const modeButtons = new Map<string, HTMLButtonElement>();
  for (const mode of MODES) {
    modeButtons.set(mode, get(`mode-${mode}`) as HTMLButtonElement);
  }
  return {
    status: get("status"),
    modeButtons,
    modeIndicator: get("mode-indicator"),
    epsilon: get("epsilon"),
    severityBar: get("severity-bar"),
    severityLabel: get("severity-label"),
    latency: get("latency"),
    chart: get("history-chart") as HTMLCanvasElement,
  };
}
