"""Security-enhanced cross-round memory.

Each (user, agent) pair owns an append-only entity dictionary of past user
queries, allowed tool returns, and RAG retrievals.  A pluggable, strictly
extractive selector picks dictionary keys relevant to the next query; the
selected entries rebuild both the agent's starting context and seed edges
in the fresh round's flow graph, so cross-round attacks remain visible to
path policies.  Per-user sessions are fully isolated.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .labels import SubjectKind, SubjectLabel
from .view import EdgeKind, FlowEdge, SystemView, begin_round


class MemoryError_(ValueError):
    pass


class BadOriginKind(MemoryError_):
    pass


class SelectorViolation(MemoryError_):
    pass


class PendingInvocation(MemoryError_):
    pass


_VALID_ORIGINS = frozenset({SubjectKind.USER, SubjectKind.TOOL, SubjectKind.RAG_DB})


@dataclass(frozen=True)
class EntityEntry:
    key: int
    content: str
    origin: SubjectLabel


class EntityDictionary:
    """Append-only, densely keyed interaction log for one (user, agent)."""

    def __init__(self, user: str, agent: str):
        self.owner = (user, agent)
        self._entries: list[EntityEntry] = []

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> tuple[EntityEntry, ...]:
        return tuple(self._entries)

    def keys(self) -> set[int]:
        return set(range(1, len(self._entries) + 1))

    def get(self, key: int) -> EntityEntry:
        return self._entries[key - 1]

    def append_entry(self, origin: SubjectLabel, content: str) -> int:
        if origin.kind not in _VALID_ORIGINS:
            raise BadOriginKind(
                f"{origin.kind.value} cannot originate a memory entry"
            )
        entry = EntityEntry(key=len(self._entries) + 1, content=content, origin=origin)
        self._entries.append(entry)
        return entry.key

    def dump_journal(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self._entries:
                fh.write(json.dumps({
                    "key": e.key,
                    "origin": {"kind": e.origin.kind.value, "name": e.origin.name,
                               "labels": dict(e.origin.attributes)},
                    "content": e.content,
                }) + "\n")

    @classmethod
    def load_journal(cls, path: str | Path, user: str, agent: str) -> "EntityDictionary":
        d = cls(user, agent)
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                doc = json.loads(line)
                origin = SubjectLabel(
                    name=doc["origin"]["name"],
                    kind=SubjectKind[doc["origin"]["kind"]],
                    attributes=doc["origin"].get("labels", {}),
                )
                d.append_entry(origin, doc["content"])
        return d


# A selector maps (query, dictionary) to a set of existing keys.
ContextSelector = Callable[[str, EntityDictionary], Iterable[int]]


def scripted_selector(table: dict[str, Iterable[int]]) -> ContextSelector:
    """Exact-match query table; unknown queries select nothing."""
    return lambda query, d: set(table.get(query, ()))


def keyword_selector(query: str, d: EntityDictionary) -> set[int]:
    """Deterministic token-overlap heuristic for demos."""
    tokens = set(re.findall(r"[a-z0-9]+", query.lower()))
    out = set()
    for entry in d.entries():
        if tokens & set(re.findall(r"[a-z0-9]+", entry.content.lower())):
            out.add(entry.key)
    return out


def select_context(selector: ContextSelector, query: str,
                   d: EntityDictionary) -> set[int]:
    """Run a selector, enforcing the extractive contract."""
    keys = set(selector(query, d))
    bogus = keys - d.keys()
    if bogus:
        raise SelectorViolation(f"selector returned nonexistent keys {sorted(bogus)}")
    return keys


@dataclass(frozen=True)
class RoundSeed:
    initial_context: tuple[str, ...]
    view: SystemView


def seed_round(keys: set[int], d: EntityDictionary, user: SubjectLabel,
               agent: SubjectLabel, round_id: str | None = None) -> RoundSeed:
    """Start a round whose graph re-introduces the selected entries' origins.

    The seed graph is the bare two-node round plus one node and inbound
    edge per selected entry: tool origins appear as returned tool nodes,
    database origins as retrievals, and user-origin entries reuse the
    round's user node with an extra query edge.
    """
    bogus = keys - d.keys()
    if bogus:
        raise SelectorViolation(f"seed keys {sorted(bogus)} not in dictionary")
    view = begin_round(user, agent, round_id=round_id)
    context: list[str] = []
    for key in sorted(keys):
        entry = d.get(key)
        context.append(entry.content)
        origin = entry.origin
        seq = view._next_seq()
        if origin.kind is SubjectKind.USER:
            view.edges.append(FlowEdge(view.round_user, view.entry_agent,
                                       EdgeKind.QUERY, seq))
        elif origin.kind is SubjectKind.RAG_DB:
            node = view._singleton(origin, seq)
            view.edges.append(FlowEdge(node.id, view.entry_agent,
                                       EdgeKind.RETRIEVE, seq))
        else:
            node = view._new_node(origin, seq)
            view._returned.add(node.id)
            view.edges.append(FlowEdge(node.id, view.entry_agent,
                                       EdgeKind.RETURN, seq))
    return RoundSeed(initial_context=tuple(context), view=view)


@dataclass
class RoundRecord:
    """What one finished round contributes back to memory."""

    query: str
    user: SubjectLabel
    agent: SubjectLabel
    tool_returns: list[tuple[SubjectLabel, str]] = field(default_factory=list)
    rag_returns: list[tuple[SubjectLabel, str]] = field(default_factory=list)


class UserSession:
    """Per-user isolated state: dictionaries, active view, decision log."""

    def __init__(self, user: SubjectLabel):
        self.user = user
        self._dicts: dict[str, EntityDictionary] = {}
        self.active_view: SystemView | None = None
        self.decision_log: list[dict] = []

    def dictionary_for(self, agent: SubjectLabel) -> EntityDictionary:
        if agent.name not in self._dicts:
            self._dicts[agent.name] = EntityDictionary(self.user.name, agent.name)
        return self._dicts[agent.name]

    def end_round(self, record: RoundRecord, pending: Iterable[str] = ()) -> None:
        """Discard the round view and append this round's events to memory.

        Denied or unresolved invocations contribute nothing; a still-pending
        invocation is an error.
        """
        if list(pending):
            raise PendingInvocation("round has unresolved invocations")
        d = self.dictionary_for(record.agent)
        d.append_entry(record.user, record.query)
        for origin, content in record.tool_returns:
            d.append_entry(origin, content)
        for origin, content in record.rag_returns:
            d.append_entry(origin, content)
        self.active_view = None


class SessionStore:
    """Creates and hands out isolated per-user sessions."""

    def __init__(self):
        self._sessions: dict[str, UserSession] = {}

    def session_for(self, user: SubjectLabel) -> UserSession:
        if user.name not in self._sessions:
            self._sessions[user.name] = UserSession(user)
        return self._sessions[user.name]
