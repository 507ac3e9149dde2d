/** Pure SVG rendering of a flow-graph snapshot.
 *
 * Layout is left-to-right by node creation order (which follows the
 * edge sequence numbers), so the drawing is a pure function of the
 * snapshot and re-rendering the same snapshot yields identical markup.
 */

import type { ViewSnapshot } from "./api.js";
import { escapeHtml } from "./cards.js";

const NODE_W = 132;
const NODE_H = 44;
const GAP_X = 56;
const ROW_H = 78;
const MARGIN = 24;

const KIND_FILL: Record<string, string> = {
  USER: "#dbeafe",
  AGENT: "#dcfce7",
  TOOL: "#fef9c3",
  RAG_DB: "#fae8ff",
};

const EDGE_DASH: Record<string, string> = {
  QUERY: "",
  INVOKE: "",
  RETURN: "6 3",
  RETRIEVE: "2 3",
  MESSAGE: "8 3",
};

interface Placed {
  x: number;
  y: number;
}

function layout(snapshot: ViewSnapshot): Map<string, Placed> {
  // one row per lane: users on top, agents middle, tools/dbs bottom
  const laneOf = (kind: string) =>
    kind === "USER" ? 0 : kind === "AGENT" ? 1 : 2;
  const placed = new Map<string, Placed>();
  const columns = [0, 0, 0];
  for (const node of snapshot.nodes) {
    const lane = laneOf(node.kind);
    const column = Math.max(...columns);
    placed.set(node.id, {
      x: MARGIN + column * (NODE_W + GAP_X),
      y: MARGIN + lane * ROW_H,
    });
    columns[lane] = column + 1;
  }
  return placed;
}

export function renderGraph(snapshot: ViewSnapshot | null): string {
  if (snapshot === null || snapshot.nodes.length === 0) {
    return '<p class="idle">No flow recorded for this round.</p>';
  }
  const placed = layout(snapshot);
  const width =
    MARGIN * 2 + snapshot.nodes.length * (NODE_W + GAP_X) - GAP_X;
  const height = MARGIN * 2 + 3 * ROW_H;

  const edges = snapshot.edges
    .map((edge) => {
      const a = placed.get(edge.from);
      const b = placed.get(edge.to);
      if (!a || !b) return "";
      const x1 = a.x + NODE_W / 2;
      const y1 = a.y + NODE_H / 2;
      const x2 = b.x + NODE_W / 2;
      const y2 = b.y + NODE_H / 2;
      const dash = EDGE_DASH[edge.kind] ?? "";
      const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
      return (
        `<g class="edge edge-${edge.kind.toLowerCase()}">` +
        `<line x1="${x1}" y1="${y1}" x2="${x2}" y2="${y2}"` +
        ` stroke="#475569"${dashAttr} marker-end="url(#arrow)"/>` +
        `<text x="${(x1 + x2) / 2}" y="${(y1 + y2) / 2 - 4}"` +
        ` class="edge-label">${edge.seq}:${edge.kind}</text>` +
        `</g>`
      );
    })
    .join("");

  const nodes = snapshot.nodes
    .map((node) => {
      const p = placed.get(node.id)!;
      const fill = node.blocked ? "#fee2e2" : KIND_FILL[node.kind] ?? "#f1f5f9";
      const stroke = node.blocked ? "#dc2626" : "#334155";
      const badge = node.blocked
        ? `<text x="${p.x + NODE_W - 8}" y="${p.y + 14}" text-anchor="end"` +
          ` class="deny-marker">DENY</text>`
        : "";
      return (
        `<g class="node node-${node.kind.toLowerCase()}` +
        `${node.blocked ? " blocked" : ""}">` +
        `<rect x="${p.x}" y="${p.y}" width="${NODE_W}" height="${NODE_H}"` +
        ` rx="8" fill="${fill}" stroke="${stroke}"/>` +
        `<text x="${p.x + NODE_W / 2}" y="${p.y + NODE_H / 2 + 4}"` +
        ` text-anchor="middle">${escapeHtml(node.name)}</text>` +
        badge +
        `</g>`
      );
    })
    .join("");

  return (
    `<svg viewBox="0 0 ${width} ${height}" xmlns="http://www.w3.org/2000/svg">` +
    `<defs><marker id="arrow" viewBox="0 0 8 8" refX="8" refY="4"` +
    ` markerWidth="6" markerHeight="6" orient="auto">` +
    `<path d="M0,0 L8,4 L0,8 z" fill="#475569"/></marker></defs>` +
    edges +
    nodes +
    `</svg>`
  );
}
