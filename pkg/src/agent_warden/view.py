"""Per-round directed information-flow graph.

Each round of agent execution owns one graph.  The graph starts with the
querying user and the entry agent, then grows monotonically: every tool
invocation adds a fresh per-invocation tool node, retrievals add one node
per database, inter-agent messages add recipient agents.  Edges carry a
strictly increasing sequence number; pattern matching only follows paths
whose sequence numbers increase, so policies fire on causally ordered
flows only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Mapping

from .labels import SubjectKind, SubjectLabel


class EdgeKind(Enum):
    QUERY = "QUERY"
    INVOKE = "INVOKE"
    RETURN = "RETURN"
    RETRIEVE = "RETRIEVE"
    MESSAGE = "MESSAGE"


class ViewError(ValueError):
    """Base class for graph recording failures."""


class UnlabeledSubject(ViewError):
    pass


class UnknownAgentNode(ViewError):
    pass


class NoMatchingInvoke(ViewError):
    pass


class DuplicateReturn(ViewError):
    pass


class BlockedInvocation(ViewError):
    pass


class SelfMessage(ViewError):
    pass


@dataclass(frozen=True)
class NodeInstance:
    id: str
    subject_name: str
    kind: SubjectKind
    label: SubjectLabel
    created_seq: int
    args: Mapping[str, object] | None = None


@dataclass(frozen=True)
class FlowEdge:
    src: str
    dst: str
    kind: EdgeKind
    seq: int
    msg: str | None = None


@dataclass(frozen=True)
class FlowPath:
    """A simple, sequence-monotone walk through the graph."""

    nodes: tuple[NodeInstance, ...]
    edges: tuple[FlowEdge, ...]

    def seqs(self) -> tuple[int, ...]:
        return tuple(e.seq for e in self.edges)


_round_counter = itertools.count(1)


class SystemView:
    """Mutable per-round flow graph; single-threaded within a round."""

    def __init__(self, round_id: str | None = None):
        self.round_id = round_id or f"r{next(_round_counter)}"
        self.nodes: dict[str, NodeInstance] = {}
        self.edges: list[FlowEdge] = []
        self.round_user: str = ""
        self.entry_agent: str = ""
        self._seq = 0
        self._node_counter = 0
        # subject name -> node id for singleton kinds (user/agent/db)
        self._singletons: dict[str, str] = {}
        self._blocked: set[str] = set()
        self._returned: set[str] = set()

    # -- internals ---------------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _new_node(self, subject: SubjectLabel, seq: int,
                  args: Mapping[str, object] | None = None) -> NodeInstance:
        self._node_counter += 1
        node = NodeInstance(
            id=f"{self.round_id}:n{self._node_counter}",
            subject_name=subject.name,
            kind=subject.kind,
            label=subject,
            created_seq=seq,
            args=dict(args) if args is not None else None,
        )
        self.nodes[node.id] = node
        return node

    def _singleton(self, subject: SubjectLabel, seq: int) -> NodeInstance:
        node_id = self._singletons.get(subject.name)
        if node_id is not None:
            return self.nodes[node_id]
        node = self._new_node(subject, seq)
        self._singletons[subject.name] = node.id
        return node

    def _require_agent(self, node_id: str) -> NodeInstance:
        node = self.nodes.get(node_id)
        if node is None or node.kind not in (SubjectKind.AGENT, SubjectKind.USER):
            raise UnknownAgentNode(f"no agent node {node_id!r} in round {self.round_id}")
        return node

    @staticmethod
    def _require_label(subject: SubjectLabel) -> None:
        from .labels import KIND_ATTRIBUTES
        required = KIND_ATTRIBUTES[subject.kind]
        if required - set(subject.attributes):
            raise UnlabeledSubject(f"{subject.name}: incomplete label for {subject.kind.value}")

    # -- recording ---------------------------------------------------------

    def record_invocation(self, agent_id: str, tool: SubjectLabel,
                          args: Mapping[str, object]) -> str:
        """Record a pending tool call; execution is gated separately."""
        self._require_agent(agent_id)
        self._require_label(tool)
        seq = self._next_seq()
        node = self._new_node(tool, seq, args=args)
        self.edges.append(FlowEdge(agent_id, node.id, EdgeKind.INVOKE, seq))
        return node.id

    def record_return(self, tool_node_id: str) -> None:
        node = self.nodes.get(tool_node_id)
        invoke = next((e for e in self.edges
                       if e.dst == tool_node_id and e.kind is EdgeKind.INVOKE), None)
        if node is None or invoke is None:
            raise NoMatchingInvoke(f"no invocation recorded for {tool_node_id!r}")
        if tool_node_id in self._blocked:
            raise BlockedInvocation(f"{node.subject_name} invocation was denied")
        if tool_node_id in self._returned:
            raise DuplicateReturn(f"{node.subject_name} already returned")
        self._returned.add(tool_node_id)
        self.edges.append(FlowEdge(tool_node_id, invoke.src, EdgeKind.RETURN, self._next_seq()))

    def mark_blocked(self, tool_node_id: str) -> None:
        """A denied invocation never produces a return edge."""
        self._blocked.add(tool_node_id)

    def record_retrieval(self, db: SubjectLabel, agent_id: str) -> str:
        self._require_agent(agent_id)
        self._require_label(db)
        seq = self._next_seq()
        node = self._singleton(db, seq)
        self.edges.append(FlowEdge(node.id, agent_id, EdgeKind.RETRIEVE, seq))
        return node.id

    def record_message(self, from_agent_id: str, to_agent: SubjectLabel,
                       msg: str) -> str:
        self._require_agent(from_agent_id)
        self._require_label(to_agent)
        if self.nodes[from_agent_id].subject_name == to_agent.name:
            raise SelfMessage(f"{to_agent.name} cannot message itself")
        seq = self._next_seq()
        node = self._singleton(to_agent, seq)
        self.edges.append(FlowEdge(from_agent_id, node.id, EdgeKind.MESSAGE, seq, msg=msg))
        return node.id

    def agent_node(self, subject_name: str) -> str:
        node_id = self._singletons.get(subject_name)
        if node_id is None:
            raise UnknownAgentNode(f"no node for subject {subject_name!r}")
        return node_id

    def is_returned(self, node_id: str) -> bool:
        return node_id in self._returned

    def is_blocked(self, node_id: str) -> bool:
        return node_id in self._blocked

    # -- queries -----------------------------------------------------------

    def paths_to(self, target_id: str, max_len: int = 8) -> list[FlowPath]:
        """All simple, seq-monotone directed paths ending at target.

        Includes every suffix (paths need not start at the user node).
        Ordered lexicographically by edge sequence numbers.
        """
        if target_id not in self.nodes:
            raise UnknownAgentNode(f"no node {target_id!r}")
        incoming: dict[str, list[FlowEdge]] = {}
        for edge in self.edges:
            incoming.setdefault(edge.dst, []).append(edge)

        paths: list[tuple[tuple[int, ...], FlowPath]] = []

        def extend(node_id: str, edges_acc: list[FlowEdge], seen: set[str]) -> None:
            path_nodes = [self.nodes[node_id]]
            for e in edges_acc:
                path_nodes.append(self.nodes[e.dst])
            fp = FlowPath(nodes=tuple(path_nodes), edges=tuple(edges_acc))
            paths.append((fp.seqs(), fp))
            if len(path_nodes) >= max_len:
                return
            min_seq = edges_acc[0].seq if edges_acc else None
            for edge in incoming.get(node_id, ()):
                if min_seq is not None and edge.seq >= min_seq:
                    continue
                if edge.src in seen:
                    continue
                extend(edge.src, [edge] + edges_acc, seen | {edge.src})

        extend(target_id, [], {target_id})
        paths.sort(key=lambda item: item[0])
        return [fp for _, fp in paths]

    # -- export ------------------------------------------------------------

    def snapshot(self) -> dict:
        """Serializable export consumed by the console and golden tests."""
        return {
            "round_id": self.round_id,
            "nodes": [
                {
                    "id": n.id,
                    "name": n.subject_name,
                    "kind": n.kind.value,
                    "labels": dict(n.label.attributes),
                    **({"args": n.args} if n.args is not None else {}),
                    **({"blocked": True} if n.id in self._blocked else {}),
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.created_seq)
            ],
            "edges": [
                {
                    "from": e.src,
                    "to": e.dst,
                    "kind": e.kind.value,
                    "seq": e.seq,
                    **({"msg": e.msg} if e.msg is not None else {}),
                }
                for e in self.edges
            ],
        }


def begin_round(user: SubjectLabel, entry_agent: SubjectLabel,
                round_id: str | None = None) -> SystemView:
    """Fresh round graph: the user, the entry agent, one query edge."""
    if user.kind is not SubjectKind.USER:
        raise UnlabeledSubject(f"{user.name} is not a user")
    if entry_agent.kind is not SubjectKind.AGENT:
        raise UnlabeledSubject(f"{entry_agent.name} is not an agent")
    SystemView._require_label(entry_agent)
    view = SystemView(round_id=round_id)
    seq = view._next_seq()
    user_node = view._singleton(user, seq)
    agent_node = view._singleton(entry_agent, seq)
    view.edges.append(FlowEdge(user_node.id, agent_node.id, EdgeKind.QUERY, seq))
    view.round_user = user_node.id
    view.entry_agent = agent_node.id
    return view
