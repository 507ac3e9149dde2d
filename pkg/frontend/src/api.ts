/** Typed client for the serve wire protocol.  No other endpoints exist. */

export interface PathNode {
  name: string;
  kind: string;
}

export interface PendingCard {
  ask_id: string;
  round_id: string;
  path: PathNode[];
  policy_text: string;
  explanation: string;
  /** absolute unix time (seconds) at which the server fails closed */
  deadline: number;
}

export type Choice = "disallow" | "allow_once" | "always_allow";

export interface DecisionResult {
  final: "allow" | "deny";
  synthesized_policy?: string;
}

export interface SnapshotNode {
  id: string;
  name: string;
  kind: string;
  labels: Record<string, string>;
  args?: Record<string, unknown>;
  blocked?: boolean;
}

export interface SnapshotEdge {
  from: string;
  to: string;
  kind: string;
  seq: number;
  msg?: string;
}

export interface ViewSnapshot {
  round_id: string;
  nodes: SnapshotNode[];
  edges: SnapshotEdge[];
}

export interface LogRecord {
  seq: number;
  round_id: string;
  pending_tool: string;
  outcome: string;
  path: string[];
  policy_source_text: string | null;
  ask_choice?: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, init);
  const body = await resp.json();
  if (!resp.ok) {
    throw new ApiError(resp.status, body?.error ?? resp.statusText);
  }
  return body as T;
}

export class ConsoleApi {
  constructor(private readonly base: string) {}

  pollPending(): Promise<PendingCard[]> {
    return request<PendingCard[]>(`${this.base}/api/pending`);
  }

  submitChoice(askId: string, choice: Choice): Promise<DecisionResult> {
    return request<DecisionResult>(`${this.base}/api/decision`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ ask_id: askId, choice }),
    });
  }

  /** Resolves to null for an unknown round (the empty state). */
  async fetchView(roundId: string): Promise<ViewSnapshot | null> {
    try {
      return await request<ViewSnapshot>(
        `${this.base}/api/view/${encodeURIComponent(roundId)}`,
      );
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) return null;
      throw err;
    }
  }

  fetchLog(since = 0): Promise<LogRecord[]> {
    return request<LogRecord[]>(`${this.base}/api/log?since=${since}`);
  }
}
