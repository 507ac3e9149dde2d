/** Pure HTML rendering for pending approval cards.
 *
 * Everything here is a pure function of server data plus the current
 * time, so rendering never mutates server state and is unit-testable
 * without a DOM.
 */

import type { Choice, PendingCard } from "./api.js";

export const CHOICES: readonly { choice: Choice; label: string }[] = [
  { choice: "disallow", label: "Disallow" },
  { choice: "allow_once", label: "Allow once" },
  { choice: "always_allow", label: "Always allow" },
];

const KIND_ICONS: Record<string, string> = {
  USER: "\u{1F464}", // bust silhouette
  AGENT: "\u{1F916}", // robot
  TOOL: "\u{1F527}", // wrench
  RAG_DB: "\u{1F4DA}", // books
};

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** "43s left", "2m 05s left", or "expired". */
export function countdownText(deadline: number, nowSeconds: number): string {
  const remaining = Math.floor(deadline - nowSeconds);
  if (remaining <= 0) return "expired";
  if (remaining < 60) return `${remaining}s left`;
  const minutes = Math.floor(remaining / 60);
  const seconds = remaining % 60;
  return `${minutes}m ${String(seconds).padStart(2, "0")}s left`;
}

/** Ordered subject chips joined by arrows — exactly the server's path. */
export function pathChips(card: PendingCard): string {
  return card.path
    .map((node) => {
      const icon = KIND_ICONS[node.kind] ?? "?";
      return (
        `<span class="chip chip-${node.kind.toLowerCase()}">` +
        `${icon} ${escapeHtml(node.name)}</span>`
      );
    })
    .join('<span class="arrow">→</span>');
}

export function renderCard(card: PendingCard, nowSeconds: number): string {
  const expired = card.deadline <= nowSeconds;
  const buttons = CHOICES.map(({ choice, label }) => {
    const isDefault = choice === "disallow";
    const classes = ["choice", `choice-${choice}`, isDefault ? "default" : ""]
      .filter(Boolean)
      .join(" ");
    const disabled = expired ? " disabled" : "";
    return (
      `<button class="${classes}" data-ask="${escapeHtml(card.ask_id)}"` +
      ` data-choice="${choice}"${disabled}>${label}</button>`
    );
  }).join("");
  const status = expired
    ? '<span class="status denied">denied by timeout</span>'
    : `<span class="status countdown">${countdownText(card.deadline, nowSeconds)}</span>`;
  return (
    `<article class="card" data-ask="${escapeHtml(card.ask_id)}">` +
    `<div class="path">${pathChips(card)}</div>` +
    `<pre class="policy">${escapeHtml(card.policy_text)}</pre>` +
    `<p class="explanation">${escapeHtml(card.explanation)}</p>` +
    status +
    `<div class="choices">${buttons}</div>` +
    `</article>`
  );
}

export function renderCards(cards: PendingCard[], nowSeconds: number): string {
  if (cards.length === 0) {
    return '<p class="idle">No pending decisions.</p>';
  }
  return cards.map((card) => renderCard(card, nowSeconds)).join("");
}

/** Shown after an always-allow answer: the server's synthesized policy. */
export function renderSynthesized(policyText: string): string {
  return `<pre class="synthesized">${escapeHtml(policyText)}</pre>`;
}

export function renderOutcomeBadge(final: "allow" | "deny"): string {
  const label = final === "deny" ? "DENY" : "ALLOW";
  return `<span class="badge badge-${final}">${label}</span>`;
}
