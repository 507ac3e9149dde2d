"""First-match policy evaluation over the flow graph.

Every pending tool invocation is checked against the sorted policy list:
for each policy, path patterns are matched against all causally ordered
paths ending at the pending tool node; the first (policy, path) pair whose
rule evaluates true determines the outcome.  No match means allow.  ASK
outcomes are resolved by a responder — scripted in tests, a terminal
prompt in the CLI, or a remote approval console — and an "always allow"
answer synthesizes a fully concrete allow policy that takes priority on
replays of the same flow.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

from .labels import SubjectKind
from .policy import (
    And,
    ArgMatch,
    AttrCmp,
    Goal,
    NamedTerm,
    Not,
    Or,
    Origin,
    PathPattern,
    Policy,
    RuleExpr,
    TypedTerm,
    Wildcard,
    regex_search,
    render_policy,
    sort_policies,
)
from .view import FlowPath, NodeInstance, SystemView


class Outcome(Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"
    ASK = "ASK"


_GOAL_OUTCOME = {Goal.ALLOW: Outcome.ALLOW, Goal.DENY: Outcome.DENY, Goal.ASK: Outcome.ASK}


class EngineError(ValueError):
    pass


class NotPending(EngineError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str


@dataclass(frozen=True)
class Binding:
    """One successful pattern match: variable bindings plus the matched path."""

    variables: Mapping[str, NodeInstance]
    path: FlowPath
    policy: Policy

    def subject_names(self) -> list[str]:
        return [n.subject_name for n in self.path.nodes]


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    matched: Binding | None
    explanation: str
    diagnostics: tuple[Diagnostic, ...] = ()


class AskChoice(Enum):
    DISALLOW = "disallow"
    ALLOW_ONCE = "allow_once"
    ALWAYS_ALLOW = "always_allow"


# A responder maps an ASK decision to a choice, possibly after a delay.
AskResponder = Callable[[Decision], AskChoice]


@dataclass
class PolicyDB:
    """Sorted policy list; replaced as a whole when synthesis appends."""

    policies: list[Policy]
    version: int = 0

    @classmethod
    def from_policies(cls, policies: Sequence[Policy]) -> "PolicyDB":
        return cls(policies=sort_policies(policies))

    def with_policy(self, policy: Policy) -> "PolicyDB":
        return PolicyDB(policies=sort_policies([*self.policies, policy]),
                        version=self.version + 1)


# ---------------------------------------------------------------------------
# Pattern matching

_TERM_OK = {
    SubjectKind.AGENT: "agent",
    SubjectKind.TOOL: "tool",
    SubjectKind.RAG_DB: "db",
}


def _term_matches(term, node: NodeInstance) -> bool:
    if isinstance(term, Wildcard):
        return True
    if node.kind not in _TERM_OK:
        return False
    if node.kind is not term.kind:
        return False
    if isinstance(term, NamedTerm):
        return node.subject_name == term.name
    return True


def _iter_matches(terms: tuple, nodes: tuple[NodeInstance, ...],
                  binding: dict[str, NodeInstance]):
    """Yield every assignment matching pattern terms against a node sequence.

    ``*`` consumes one or more consecutive nodes; alignments are produced in
    deterministic order (shorter wildcard spans first, left to right).
    """
    if not terms:
        if not nodes:
            yield dict(binding)
        return
    head, rest = terms[0], terms[1:]
    if isinstance(head, Wildcard):
        for eat in range(1, len(nodes) + 1):
            yield from _iter_matches(rest, nodes[eat:], binding)
        return
    if not nodes or not _term_matches(head, nodes[0]):
        return
    if isinstance(head, TypedTerm):
        binding[head.var] = nodes[0]
        yield from _iter_matches(rest, nodes[1:], binding)
        del binding[head.var]
    else:
        yield from _iter_matches(rest, nodes[1:], binding)


def match_paths(pattern: PathPattern, view: SystemView, target_id: str,
                max_len: int = 8, policy: Policy | None = None) -> list[Binding]:
    """All bindings of the pattern over causal paths ending at the target."""
    placeholder = policy or Policy(goal=Goal.DENY, path=pattern)
    bindings: list[Binding] = []
    for path in view.paths_to(target_id, max_len=max_len):
        if len(path.nodes) < len([t for t in pattern.terms if not isinstance(t, Wildcard)]):
            continue
        seen: set[tuple] = set()
        for var_map in _iter_matches(pattern.terms, path.nodes, {}):
            key = tuple(sorted((var, node.id) for var, node in var_map.items()))
            if key in seen:  # same assignment via a different wildcard split
                continue
            seen.add(key)
            bindings.append(Binding(variables=var_map, path=path, policy=placeholder))
    return bindings


# ---------------------------------------------------------------------------
# Rule evaluation

def _lookup_arg(args: Mapping | None, arg_path: tuple[str, ...]):
    cur: object = args
    for part in arg_path:
        if not isinstance(cur, Mapping) or part not in cur:
            return None
        cur = cur[part]
    return cur


def eval_rule(rule: RuleExpr | None, binding: Binding) -> tuple[bool, list[Diagnostic]]:
    """Evaluate a rule over bound nodes.

    A comparison or argument match whose attribute or key is absent on the
    bound node is false (even for ``!=``) and reports a diagnostic; absent
    rule means true.
    """
    diags: list[Diagnostic] = []

    def walk(expr: RuleExpr) -> bool:
        if isinstance(expr, AttrCmp):
            node = binding.variables.get(expr.var)
            value = node.label.get(expr.attribute) if node is not None else None
            if value is None:
                diags.append(Diagnostic(
                    "MissingAttribute",
                    f"{expr.var}.{expr.attribute} absent on "
                    f"{node.subject_name if node else expr.var}",
                ))
                return False
            return (value == expr.value) if expr.op == "==" else (value != expr.value)
        if isinstance(expr, ArgMatch):
            node = binding.variables.get(expr.var)
            raw = _lookup_arg(node.args if node is not None else None, expr.arg_path)
            if raw is None:
                diags.append(Diagnostic(
                    "MissingAttribute",
                    f"{expr.var}.args.{'.'.join(expr.arg_path)} absent",
                ))
                return False
            return regex_search(expr.pattern, str(raw))
        if isinstance(expr, Not):
            return not walk(expr.expr)
        if isinstance(expr, And):
            return all(walk(item) for item in expr.items)
        if isinstance(expr, Or):
            return any(walk(item) for item in expr.items)
        raise TypeError(f"unknown rule node {expr!r}")

    if rule is None:
        return True, diags
    return walk(rule), diags


# ---------------------------------------------------------------------------
# Decision

def _explain(policy: Policy, binding: Binding) -> str:
    chain = " -> ".join(binding.subject_names())
    return (f"{policy.goal.value} by policy [{render_policy(policy).replace(chr(10), ' / ')}] "
            f"on flow {chain}")


def decide(view: SystemView, pending_id: str, db: PolicyDB,
           max_len: int = 8) -> Decision:
    """First-match evaluation for one pending tool invocation."""
    node = view.nodes.get(pending_id)
    if node is None or node.kind is not SubjectKind.TOOL:
        raise NotPending(f"{pending_id!r} is not a tool invocation node")
    if view.is_returned(pending_id) or view.is_blocked(pending_id):
        raise NotPending(f"{pending_id!r} already resolved")
    all_diags: list[Diagnostic] = []
    for policy in db.policies:
        for binding in match_paths(policy.path, view, pending_id,
                                   max_len=max_len, policy=policy):
            ok, diags = eval_rule(policy.rule, binding)
            all_diags.extend(diags)
            if ok:
                return Decision(
                    outcome=_GOAL_OUTCOME[policy.goal],
                    matched=binding,
                    explanation=_explain(policy, binding),
                    diagnostics=tuple(all_diags),
                )
    return Decision(outcome=Outcome.ALLOW, matched=None,
                    explanation="allow by default: no policy matched",
                    diagnostics=tuple(all_diags))


def synthesize_allow_policy(binding: Binding) -> Policy:
    """Concrete allow policy for the exact matched flow.

    Every node on the path becomes a named term; a leading user node is
    dropped (users are not nameable in paths and add no specificity).
    """
    nodes = list(binding.path.nodes)
    if nodes and nodes[0].kind is SubjectKind.USER:
        nodes = nodes[1:]
    terms = tuple(NamedTerm(kind=n.kind, name=n.subject_name) for n in nodes)
    policy = Policy(goal=Goal.ALLOW, path=PathPattern(terms=terms),
                    rule=None, origin=Origin.SYNTHESIZED)
    return Policy(goal=policy.goal, path=policy.path, rule=None,
                  origin=Origin.SYNTHESIZED, source_text=render_policy(policy))


def resolve_ask(decision: Decision, choice: AskChoice,
                db: PolicyDB) -> tuple[Outcome, PolicyDB]:
    """Apply a responder's answer to an ASK decision."""
    if decision.outcome is not Outcome.ASK or decision.matched is None:
        raise EngineError("resolve_ask requires an ASK decision with a match")
    if choice is AskChoice.DISALLOW:
        return Outcome.DENY, db
    if choice is AskChoice.ALLOW_ONCE:
        return Outcome.ALLOW, db
    synthesized = synthesize_allow_policy(decision.matched)
    return Outcome.ALLOW, db.with_policy(synthesized)


def scripted_responder(choice: AskChoice) -> AskResponder:
    return lambda decision: choice


def ask_with_deadline(responder: AskResponder, decision: Decision,
                      deadline_s: float) -> AskChoice:
    """Run the responder with a wall-clock budget; no answer means deny."""
    result: list[AskChoice] = []

    def work() -> None:
        try:
            result.append(responder(decision))
        except Exception:
            pass

    thread = threading.Thread(target=work, daemon=True)
    thread.start()
    thread.join(timeout=deadline_s)
    if not result:
        return AskChoice.DISALLOW
    return result[0]
