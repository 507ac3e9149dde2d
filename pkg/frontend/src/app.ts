/** Browser entry point: 1 s polling loop wired to the DOM.
 *
 * The console is stateless with respect to security: closing and
 * reopening it never changes a decision; only an explicit choice
 * (POST /api/decision) mutates server state, and the UI waits for the
 * server acknowledgement before updating (no optimistic rendering).
 */

import { ApiError, ConsoleApi, type Choice } from "./api.js";
import { renderCards, renderOutcomeBadge, renderSynthesized } from "./cards.js";
import { renderGraph } from "./graph.js";

const POLL_INTERVAL_MS = 1000;
const MAX_BACKOFF_MS = 8000;

export function startConsole(root: Document, base: string): void {
  const api = new ConsoleApi(base);
  const cardsEl = root.getElementById("cards")!;
  const graphEl = root.getElementById("graph")!;
  const noticeEl = root.getElementById("notice")!;
  let backoff = POLL_INTERVAL_MS;
  let shownRound: string | null = null;

  async function poll(): Promise<void> {
    try {
      const cards = await api.pollPending();
      cardsEl.innerHTML = renderCards(cards, Date.now() / 1000);
      const first = cards[0];
      if (first && first.round_id !== shownRound) {
        shownRound = first.round_id;
        graphEl.innerHTML = renderGraph(await api.fetchView(first.round_id));
      }
      noticeEl.textContent = "";
      backoff = POLL_INTERVAL_MS;
    } catch {
      noticeEl.textContent = "connection lost — retrying";
      backoff = Math.min(backoff * 2, MAX_BACKOFF_MS);
    }
    setTimeout(poll, backoff);
  }

  cardsEl.addEventListener("click", async (event) => {
    const target = event.target as HTMLElement;
    const askId = target.dataset["ask"];
    const choice = target.dataset["choice"] as Choice | undefined;
    if (!askId || !choice) return;
    try {
      const result = await api.submitChoice(askId, choice);
      let html = renderOutcomeBadge(result.final);
      if (result.synthesized_policy) {
        html += renderSynthesized(result.synthesized_policy);
      }
      noticeEl.innerHTML = html;
    } catch (err) {
      if (err instanceof ApiError && err.status === 410) {
        noticeEl.textContent = "decision already resolved on the server";
      } else {
        noticeEl.textContent = "failed to submit decision";
      }
    }
  });

  void poll();
}
