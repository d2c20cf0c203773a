// Entry point: wire the real browser WebSocket and fetch into the client,
// bind the panel, and keep the DOM in sync with every state transition.

import { DashboardClient } from "./client.js";
import type { Transport } from "./client.js";
import { MODES } from "./protocol.js";
import type { ModelInfo } from "./protocol.js";
import { bindPanel, render } from "./render.js";

function webSocketTransport(url: string): Transport {
  const ws = new WebSocket(url);
  const transport: Transport = {
    send: (data) => ws.send(data),
    close: () => ws.close(),
    onopen: null,
    onmessage: null,
    onclose: null,
  };
  ws.onopen = () => transport.onopen?.();
  ws.onmessage = (ev) => transport.onmessage?.(String(ev.data));
  ws.onclose = () => transport.onclose?.();
  ws.onerror = () => ws.close();
  return transport;
}

async function fetchInfo(url: string): Promise<ModelInfo> {
  const res = await fetch(url);
  if (!res.ok) throw new Error(`GET ${url} -> ${res.status}`);
  return (await res.json()) as ModelInfo;
}

const els = bindPanel(document);
const client = new DashboardClient({
  baseUrl: window.location.origin,
  transport: webSocketTransport,
  fetchInfo,
});

for (const mode of MODES) {
  els.modeButtons.get(mode)?.addEventListener("click", () => {
    client.setPrivacyLevel(mode);
  });
}

client.subscribe((state) => render(state, els));
render(client.getState(), els);
void client.connect();
