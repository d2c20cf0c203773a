// Pure display mappings: severity label -> color, mode -> epsilon readout.
// Both are plain functions of their inputs so they test without a server.

import type { Mode } from "./protocol.js";

export type SeverityColor = "gray" | "green" | "yellow" | "red";

const COLOR_BY_LABEL: Record<string, SeverityColor> = {
  none: "gray",
  low: "green",
  medium: "yellow",
  high: "red",
};

/** Severity bar color; labels outside the four-level scale fall back to gray. */
export function severityColor(label: string): SeverityColor {
  return COLOR_BY_LABEL[label] ?? "gray";
}

/**
 * Epsilon budget readout for the acknowledged mode: the level's budget from
 * /model/info ("5", "3", "1" for the stock levels), or an em dash when no
 * privacy is applied or the budgets are not known yet.
 */
export function epsilonDisplay(
  mode: Mode,
  levels: Record<string, number> | null | undefined,
): string {
  if (mode === "off" || !levels) return "—";
  const eps = levels[mode];
  if (eps === undefined) return "—";
  return Number.isInteger(eps) ? String(eps) : eps.toFixed(2);
}
