import { describe, expect, it } from "vitest";

import type { PendingCard, ViewSnapshot } from "../src/api.js";
import {
  countdownText,
  pathChips,
  renderCard,
  renderCards,
  renderOutcomeBadge,
  renderSynthesized,
} from "../src/cards.js";
import { renderGraph } from "../src/graph.js";

const card: PendingCard = {
  ask_id: "ask-1",
  round_id: "r-0",
  path: [
    { name: "owner", kind: "USER" },
    { name: "web_browser_agent", kind: "AGENT" },
    { name: "smart_lock_agent", kind: "AGENT" },
    { name: "UnlockDoor", kind: "TOOL" },
  ],
  policy_text: 'Goal ask\nPath agent:$A -> * -> tool:$B\nRule A.integrity=="UNFILTERED"',
  explanation: "matched ask policy on path owner -> ... -> UnlockDoor",
  deadline: 2000,
};

const snapshot: ViewSnapshot = {
  round_id: "r-0",
  nodes: [
    { id: "r-0:n0", name: "owner", kind: "USER", labels: {} },
    { id: "r-0:n1", name: "wba", kind: "AGENT", labels: { integrity: "UNFILTERED" } },
    { id: "r-0:n2", name: "sla", kind: "AGENT", labels: { integrity: "TRUSTED" } },
    {
      id: "r-0:n3", name: "UnlockDoor", kind: "TOOL",
      labels: { sensitivity: "HIGH" }, args: { door: "front" }, blocked: true,
    },
  ],
  edges: [
    { from: "r-0:n0", to: "r-0:n1", kind: "QUERY", seq: 1 },
    { from: "r-0:n1", to: "r-0:n2", kind: "MESSAGE", seq: 2, msg: "unlock" },
    { from: "r-0:n2", to: "r-0:n3", kind: "INVOKE", seq: 3 },
  ],
};

describe("countdown", () => {
  it("renders seconds, minutes, and expiry", () => {
    expect(countdownText(2000, 1957)).toBe("43s left");
    expect(countdownText(2000, 1875)).toBe("2m 05s left");
    expect(countdownText(2000, 2000)).toBe("expired");
  });
});

describe("pending card", () => {
  it("shows every path subject in server order", () => {
    const chips = pathChips(card);
    const names = ["owner", "web_browser_agent", "smart_lock_agent", "UnlockDoor"];
    let last = -1;
    for (const name of names) {
      const at = chips.indexOf(name);
      expect(at).toBeGreaterThan(last);
      last = at;
    }
  });

  it("has three choice buttons with disallow marked default", () => {
    const html = renderCard(card, 1950);
    expect(html.match(/<button/g)).toHaveLength(3);
    for (const choice of ["disallow", "allow_once", "always_allow"]) {
      expect(html).toContain(`data-choice="${choice}"`);
    }
    expect(html).toMatch(/choice-disallow default/);
    expect(html).not.toMatch(/choice-allow_once[^"]*default/);
    expect(html).toContain("Goal ask");
  });

  it("disables buttons and flags timeout once expired", () => {
    const html = renderCard(card, 2001);
    expect(html.match(/disabled/g)).toHaveLength(3);
    expect(html).toContain("denied by timeout");
  });

  it("renders idle state for zero cards", () => {
    expect(renderCards([], 0)).toContain("No pending decisions");
  });

  it("escapes server-provided text", () => {
    const hostile = { ...card, explanation: '<img src=x onerror="pwn()">' };
    const html = renderCard(hostile, 1950);
    expect(html).not.toContain("<img");
    expect(html).toContain("&lt;img");
  });
});

describe("decision feedback", () => {
  it("shows the synthesized policy verbatim (escaped)", () => {
    const text = "Goal allow\nPath agent:wba -> agent:sla -> tool:UnlockDoor";
    expect(renderSynthesized(text)).toContain(
      "Goal allow\nPath agent:wba -&gt; agent:sla -&gt; tool:UnlockDoor",
    );
  });

  it("renders outcome badges", () => {
    expect(renderOutcomeBadge("deny")).toContain("DENY");
    expect(renderOutcomeBadge("allow")).toContain("ALLOW");
  });
});

describe("graph", () => {
  it("is a pure function of the snapshot", () => {
    expect(renderGraph(snapshot)).toBe(renderGraph(snapshot));
  });

  it("draws every node and edge with kind styling", () => {
    const svg = renderGraph(snapshot);
    for (const name of ["owner", "wba", "sla", "UnlockDoor"]) {
      expect(svg).toContain(`>${name}</text>`);
    }
    expect(svg).toContain("edge-query");
    expect(svg).toContain("edge-message");
    expect(svg).toContain("edge-invoke");
    expect(svg).toContain("node-user");
    expect(svg).toContain("node-agent");
    expect(svg).toContain("node-tool");
  });

  it("marks the blocked tool and gives it no outgoing edge", () => {
    const svg = renderGraph(snapshot);
    expect(svg).toContain("DENY");
    expect(svg).toContain("blocked");
    // no edge starts at the blocked node's centre column
    expect(snapshot.edges.every((e) => e.from !== "r-0:n3")).toBe(true);
  });

  it("renders the empty state for unknown rounds", () => {
    expect(renderGraph(null)).toContain("No flow recorded");
  });
});
