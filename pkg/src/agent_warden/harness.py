"""Deterministic scripted multi-agent simulator.

Agents, tools, and retrieval databases are scripted: agents react to
received text via ordered trigger rules, tools return canned results per
argument fingerprint, databases answer from a fixed table.  An "injection"
is simply a payload string that matches one of an agent's triggers, which
makes susceptibility an inspectable scenario property instead of model
behavior.  Scenarios declare, per round, the minimal permitted action set
(the oracle); anything else an agent does is a privilege escalation.

Scenarios run in two modes: NAIVE executes every invocation, GUARDED
gates each one through the decision engine first.  Metrics compare the
transcript against the oracle.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .engine import (
    AskChoice,
    AskResponder,
    Decision,
    Outcome,
    PolicyDB,
    ask_with_deadline,
    decide,
    resolve_ask,
)
from .labels import SubjectKind, SubjectLabel, user_label, validate_label
from .memory import (
    RoundRecord,
    ContextSelector,
    SessionStore,
    scripted_selector,
    seed_round,
    select_context,
)
from .policy import parse_policy_pack, regex_search
from .view import SystemView, begin_round


class ScenarioError(ValueError):
    pass


class SchemaError(ScenarioError):
    pass


class DanglingReference(ScenarioError):
    pass


class NonTermination(ScenarioError):
    pass


MAX_TRANSITIONS = 32


class Mode:
    NAIVE = "naive"
    GUARDED = "guarded"


# ---------------------------------------------------------------------------
# Scripted subjects

@dataclass(frozen=True)
class AgentAction:
    kind: str  # "invoke" | "message" | "retrieve" | "reply"
    tool: str = ""
    args: Mapping[str, object] = field(default_factory=dict)
    to: str = ""
    text: str = ""
    db: str = ""
    query: str = ""


@dataclass(frozen=True)
class ReactionRule:
    trigger: str
    is_regex: bool
    actions: tuple[AgentAction, ...]

    def matches(self, content: str) -> bool:
        if self.is_regex:
            return re.search(self.trigger, content) is not None
        return self.trigger in content


@dataclass(frozen=True)
class ScriptedAgent:
    name: str
    label: SubjectLabel
    rules: tuple[ReactionRule, ...]
    fallback_reply: str = "ok"

    def react(self, content: str) -> tuple[AgentAction, ...]:
        for rule in self.rules:
            if rule.matches(content):
                return rule.actions
        return (AgentAction(kind="reply", text=self.fallback_reply),)


def _fingerprint(args: Mapping[str, object]) -> str:
    return json.dumps(args, sort_keys=True)


@dataclass(frozen=True)
class ScriptedTool:
    name: str
    label: SubjectLabel
    returns: Mapping[str, str]  # args fingerprint -> result
    default_result: str = ""

    def result_for(self, args: Mapping[str, object]) -> str:
        return self.returns.get(_fingerprint(args), self.default_result)


@dataclass(frozen=True)
class ScriptedRag:
    name: str
    label: SubjectLabel
    table: Mapping[str, str]  # query -> retrieved text
    default_result: str = ""

    def retrieve(self, query: str) -> str:
        return self.table.get(query, self.default_result)


# ---------------------------------------------------------------------------
# Scenario

@dataclass(frozen=True)
class OracleSignature:
    tool: str
    args_pattern: Mapping[str, str]  # arg key -> regex

    def matches(self, tool: str, args: Mapping[str, object]) -> bool:
        if tool != self.tool:
            return False
        for key, pattern in self.args_pattern.items():
            if key not in args or not regex_search(pattern, str(args[key])):
                return False
        return True


@dataclass(frozen=True)
class RoundSpec:
    user: str
    query: str
    adversarial: bool
    oracle_invocations: tuple[OracleSignature, ...]
    oracle_messages: tuple[tuple[str, str], ...]  # (from, to) pairs
    expected_decisions: tuple[str, ...] = ()


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: str
    agents: Mapping[str, ScriptedAgent]
    tools: Mapping[str, ScriptedTool]
    dbs: Mapping[str, ScriptedRag]
    entry_agent: str
    rounds: tuple[RoundSpec, ...]
    policy_pack: str = ""
    memory_selectors: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    use_memory: bool = False


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    try:
        return _parse_scenario(doc, path)
    except KeyError as exc:
        raise SchemaError(f"{path}: missing key {exc}") from exc


def _parse_scenario(doc: Mapping, path: Path) -> Scenario:
    subjects = doc["subjects"]
    agents: dict[str, ScriptedAgent] = {}
    for item in subjects.get("agents", []):
        label = validate_label(SubjectKind.AGENT, item["labels"], name=item["name"])
        rules = tuple(
            ReactionRule(
                trigger=rule["trigger"],
                is_regex=bool(rule.get("regex", False)),
                actions=tuple(AgentAction(**action) for action in rule["actions"]),
            )
            for rule in item.get("rules", [])
        )
        agents[item["name"]] = ScriptedAgent(
            name=item["name"], label=label, rules=rules,
            fallback_reply=item.get("fallback", "ok"),
        )
    tools: dict[str, ScriptedTool] = {}
    for item in subjects.get("tools", []):
        label = validate_label(SubjectKind.TOOL, item["labels"], name=item["name"])
        returns = {_fingerprint(entry["args"]): entry["result"]
                   for entry in item.get("returns", [])}
        tools[item["name"]] = ScriptedTool(
            name=item["name"], label=label, returns=returns,
            default_result=item.get("default_result", ""),
        )
    dbs: dict[str, ScriptedRag] = {}
    for item in subjects.get("dbs", []):
        label = validate_label(SubjectKind.RAG_DB, item["labels"], name=item["name"])
        dbs[item["name"]] = ScriptedRag(
            name=item["name"], label=label,
            table={row["query"]: row["result"] for row in item.get("table", [])},
            default_result=item.get("default_result", ""),
        )

    entry = doc["entry_agent"]
    if entry not in agents:
        raise DanglingReference(f"entry agent {entry!r} not declared")
    for agent in agents.values():
        for rule in agent.rules:
            for action in rule.actions:
                if action.kind == "invoke" and action.tool not in tools:
                    raise DanglingReference(f"{agent.name}: unknown tool {action.tool!r}")
                if action.kind == "retrieve" and action.db not in dbs:
                    raise DanglingReference(f"{agent.name}: unknown db {action.db!r}")
                if action.kind == "message" and action.to != "*" and action.to not in agents:
                    raise DanglingReference(f"{agent.name}: unknown agent {action.to!r}")
                if action.kind not in ("invoke", "message", "retrieve", "reply"):
                    raise SchemaError(f"{agent.name}: unknown action kind {action.kind!r}")

    rounds = []
    for item in doc["rounds"]:
        oracle = item.get("oracle", {})
        rounds.append(RoundSpec(
            user=item["user"],
            query=item["query"],
            adversarial=bool(item.get("adversarial", False)),
            oracle_invocations=tuple(
                OracleSignature(tool=sig["tool"],
                                args_pattern=dict(sig.get("args_pattern", {})))
                for sig in oracle.get("invocations", [])
            ),
            oracle_messages=tuple(
                (msg["from"], msg["to"]) for msg in oracle.get("messages", [])
            ),
            expected_decisions=tuple(item.get("expect", {}).get("decisions", [])),
        ))

    memory_doc = doc.get("memory", {})
    selectors = {query: tuple(keys)
                 for query, keys in memory_doc.get("selectors", {}).items()}

    pack = doc.get("policy_pack", "")
    if pack and not Path(pack).is_absolute():
        candidate = path.parent / pack
        if not candidate.exists():
            candidate = path.parent.parent / pack
        pack = str(candidate)

    return Scenario(
        name=doc.get("name", path.stem),
        topology=doc.get("topology", "SINGLE"),
        agents=agents, tools=tools, dbs=dbs,
        entry_agent=entry, rounds=tuple(rounds),
        policy_pack=pack,
        memory_selectors=selectors,
        use_memory=bool(memory_doc),
    )


# ---------------------------------------------------------------------------
# Execution

@dataclass
class RoundResult:
    spec: RoundSpec
    events: list[dict]
    decisions: list[dict]
    executed_invocations: list[tuple[str, Mapping[str, object]]]
    attempted_invocations: list[tuple[str, Mapping[str, object]]]
    messages: list[tuple[str, str]]
    policy_fired: bool
    denied_or_asked: bool
    snapshot: dict


@dataclass
class Transcript:
    scenario: str
    mode: str
    rounds: list[RoundResult] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "scenario": self.scenario,
            "mode": self.mode,
            "rounds": [
                {
                    "user": r.spec.user,
                    "query": r.spec.query,
                    "events": r.events,
                    "decisions": r.decisions,
                    "snapshot": r.snapshot,
                }
                for r in self.rounds
            ],
        }, sort_keys=True, indent=1)


@dataclass(frozen=True)
class Metrics:
    asr: float
    par: float
    fpr: float
    correctness: float


@dataclass(frozen=True)
class Violation:
    round_index: int
    kind: str  # "invoke" | "message"
    subject: str
    args: Mapping[str, object]
    executed: bool


class _RoundExecutor:
    """Runs one round's state-transition loop."""

    def __init__(self, scenario: Scenario, mode: str, view: SystemView,
                 db: PolicyDB, responder: AskResponder, ask_deadline: float,
                 decision_log: list[dict]):
        self.scenario = scenario
        self.mode = mode
        self.view = view
        self.db = db
        self.responder = responder
        self.ask_deadline = ask_deadline
        self.decision_log = decision_log
        self.events: list[dict] = []
        self.decisions: list[dict] = []
        self.executed: list[tuple[str, Mapping[str, object]]] = []
        self.attempted: list[tuple[str, Mapping[str, object]]] = []
        self.messages: list[tuple[str, str]] = []
        self.tool_returns: list[tuple[SubjectLabel, str]] = []
        self.rag_returns: list[tuple[SubjectLabel, str]] = []
        self.policy_fired = False
        self.denied_or_asked = False
        self.transitions = 0

    def deliver(self, agent_name: str, content: str) -> None:
        """Feed content to an agent and execute its reaction."""
        self.transitions += 1
        if self.transitions > MAX_TRANSITIONS:
            raise NonTermination(
                f"{self.scenario.name}: round exceeded {MAX_TRANSITIONS} transitions"
            )
        agent = self.scenario.agents[agent_name]
        for action in agent.react(content):
            if action.kind == "reply":
                self.events.append({"kind": "reply", "agent": agent_name,
                                    "text": action.text})
            elif action.kind == "invoke":
                self._do_invoke(agent_name, action)
            elif action.kind == "retrieve":
                self._do_retrieve(agent_name, action)
            elif action.kind == "message":
                self._do_message(agent_name, action)

    def _do_invoke(self, agent_name: str, action: AgentAction) -> None:
        tool = self.scenario.tools[action.tool]
        agent_id = self.view.agent_node(agent_name)
        node_id = self.view.record_invocation(agent_id, tool.label, action.args)
        self.attempted.append((action.tool, dict(action.args)))
        self.events.append({"kind": "invoke", "agent": agent_name,
                            "tool": action.tool, "args": dict(action.args)})
        if self.mode == Mode.GUARDED:
            decision = decide(self.view, node_id, self.db)
            outcome = decision.outcome
            if decision.matched is not None:
                self.policy_fired = True
            if outcome is Outcome.ASK:
                self.denied_or_asked = True
                choice = ask_with_deadline(self.responder, decision, self.ask_deadline)
                outcome, self.db = resolve_ask(decision, choice, self.db)
                self._log_decision(node_id, action, decision, outcome, choice)
            else:
                self._log_decision(node_id, action, decision, outcome, None)
            if outcome is Outcome.DENY:
                self.denied_or_asked = True
                self.view.mark_blocked(node_id)
                self.events.append({"kind": "blocked", "tool": action.tool})
                return
        else:
            self._log_decision(node_id, action, None, Outcome.ALLOW, None)
        result = tool.result_for(action.args)
        self.view.record_return(node_id)
        self.executed.append((action.tool, dict(action.args)))
        self.tool_returns.append((tool.label, result))
        self.events.append({"kind": "return", "tool": action.tool, "result": result})
        self.deliver(agent_name, result)

    def _do_retrieve(self, agent_name: str, action: AgentAction) -> None:
        db = self.scenario.dbs[action.db]
        agent_id = self.view.agent_node(agent_name)
        self.view.record_retrieval(db.label, agent_id)
        result = db.retrieve(action.query)
        self.rag_returns.append((db.label, result))
        self.events.append({"kind": "retrieve", "agent": agent_name,
                            "db": action.db, "result": result})
        self.deliver(agent_name, result)

    def _do_message(self, agent_name: str, action: AgentAction) -> None:
        recipients = (
            [a for a in self.scenario.agents if a != agent_name]
            if action.to == "*" else [action.to]
        )
        agent_id = self.view.agent_node(agent_name)
        for recipient in recipients:
            self.view.record_message(agent_id, self.scenario.agents[recipient].label,
                                     action.text)
            self.messages.append((agent_name, recipient))
            self.events.append({"kind": "message", "from": agent_name,
                                "to": recipient, "text": action.text})
            self.deliver(recipient, action.text)

    def _log_decision(self, node_id: str, action: AgentAction,
                      decision: Decision | None, outcome: Outcome,
                      choice: AskChoice | None) -> None:
        record = {
            "round_id": self.view.round_id,
            "pending_tool": action.tool,
            "outcome": outcome.value,
            "path": (decision.matched.subject_names()
                     if decision is not None and decision.matched is not None else []),
            "policy_source_text": (
                decision.matched.policy.source_text
                if decision is not None and decision.matched is not None else None
            ),
            "diagnostics": ([{"code": d.code, "message": d.message}
                             for d in decision.diagnostics] if decision else []),
        }
        if choice is not None:
            record["ask_choice"] = choice.value
        self.decisions.append(record)
        self.decision_log.append(record)


def run_scenario(scenario: Scenario, mode: str = Mode.GUARDED,
                 responder: AskResponder | None = None,
                 policy_db: PolicyDB | None = None,
                 ask_deadline: float = 120.0,
                 selector: ContextSelector | None = None,
                 sessions: SessionStore | None = None) -> tuple[Transcript, Metrics]:
    """Execute all rounds of a scenario and score the transcript."""
    if mode not in (Mode.NAIVE, Mode.GUARDED):
        raise ScenarioError(f"unknown mode {mode!r}")
    if responder is None:
        responder = lambda decision: AskChoice.DISALLOW
    if policy_db is None:
        if mode == Mode.GUARDED and scenario.policy_pack:
            text = Path(scenario.policy_pack).read_text(encoding="utf-8")
            policy_db = PolicyDB.from_policies(parse_policy_pack(text))
        else:
            policy_db = PolicyDB(policies=[])
    if selector is None:
        selector = scripted_selector({q: list(k)
                                      for q, k in scenario.memory_selectors.items()})
    sessions = sessions or SessionStore()

    transcript = Transcript(scenario=scenario.name, mode=mode)
    entry = scenario.agents[scenario.entry_agent]

    # Round ids are scoped per user so a user's log reads the same whether
    # their rounds ran interleaved with other users' or in isolation.
    ordinals: dict[str, int] = {}
    for spec in scenario.rounds:
        user = user_label(spec.user)
        session = sessions.session_for(user)
        ordinal = ordinals.get(spec.user, 0)
        ordinals[spec.user] = ordinal + 1
        round_id = f"{scenario.name}-{mode}-{spec.user}-{ordinal}"
        context: tuple[str, ...] = ()
        if scenario.use_memory:
            d = session.dictionary_for(entry.label)
            keys = select_context(selector, spec.query, d)
            seed = seed_round(keys, d, user, entry.label, round_id=round_id)
            view, context = seed.view, seed.initial_context
        else:
            view = begin_round(user, entry.label, round_id=round_id)
        session.active_view = view

        executor = _RoundExecutor(scenario, mode, view, policy_db, responder,
                                  ask_deadline, session.decision_log)
        for content in context:
            executor.deliver(scenario.entry_agent, content)
        executor.deliver(scenario.entry_agent, spec.query)
        policy_db = executor.db  # synthesized policies persist across rounds

        session.end_round(RoundRecord(
            query=spec.query, user=user, agent=entry.label,
            tool_returns=executor.tool_returns, rag_returns=executor.rag_returns,
        ))
        transcript.rounds.append(RoundResult(
            spec=spec,
            events=executor.events,
            decisions=executor.decisions,
            executed_invocations=executor.executed,
            attempted_invocations=executor.attempted,
            messages=executor.messages,
            policy_fired=executor.policy_fired,
            denied_or_asked=executor.denied_or_asked,
            snapshot=view.snapshot(),
        ))

    return transcript, compute_metrics(transcript)


# ---------------------------------------------------------------------------
# Oracle and metrics

def escalation_oracle(transcript: Transcript) -> list[Violation]:
    """Every action outside the round's permitted set, attempted or executed."""
    violations: list[Violation] = []
    for index, r in enumerate(transcript.rounds):
        executed = {(_fingerprint(args), tool) for tool, args in r.executed_invocations}
        for tool, args in r.attempted_invocations:
            if not any(sig.matches(tool, args) for sig in r.spec.oracle_invocations):
                violations.append(Violation(
                    round_index=index, kind="invoke", subject=tool, args=args,
                    executed=(_fingerprint(args), tool) in executed,
                ))
        for src, dst in r.messages:
            if (src, dst) not in r.spec.oracle_messages:
                violations.append(Violation(
                    round_index=index, kind="message", subject=f"{src}->{dst}",
                    args={}, executed=True,
                ))
    return violations


def _round_has_executed_escalation(r: RoundResult) -> bool:
    return any(
        not any(sig.matches(tool, args) for sig in r.spec.oracle_invocations)
        for tool, args in r.executed_invocations
    )


def compute_metrics(transcript: Transcript) -> Metrics:
    """Attack success, policy activation, false positives, oracle match.

    Attack success counts executed tool invocations only; attempted but
    blocked escalations (including unauthorized inter-agent messages) are
    reported by ``escalation_oracle`` instead.
    """
    attack = [r for r in transcript.rounds if r.spec.adversarial]
    benign = [r for r in transcript.rounds if not r.spec.adversarial]
    asr = (sum(_round_has_executed_escalation(r) for r in attack) / len(attack)
           if attack else 0.0)
    par = (sum(r.policy_fired for r in attack) / len(attack) if attack else 0.0)
    fpr = (sum(r.denied_or_asked for r in benign) / len(benign) if benign else 0.0)

    def round_correct(r: RoundResult) -> bool:
        for tool, args in r.executed_invocations:
            if not any(sig.matches(tool, args) for sig in r.spec.oracle_invocations):
                return False
        return True

    rounds = transcript.rounds
    correctness = (sum(round_correct(r) for r in rounds) / len(rounds)
                   if rounds else 1.0)
    return Metrics(asr=asr, par=par, fpr=fpr, correctness=correctness)
