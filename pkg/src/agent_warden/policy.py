"""Goal/Path/Rule security policy language.

A policy is up to three line groups, in fixed order::

    Goal deny
    Path db:$A -> * -> tool:$B
    Rule A.integrity=="UNFILTERED" AND (B.sensitivity!="LOW")

The Path declares node variables over the information-flow graph; the
optional Rule constrains the bound subjects' attributes, with ``!`` binding
tighter than ``AND``, which binds tighter than ``OR``.  ``*`` in a path
matches one or more consecutive nodes.  Rules may also match tool call
arguments against a portable regex subset, e.g.
``B.args.url.match(".*\\.example\\.com.*")``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, Mapping, Union

from .labels import ATTRIBUTE_VALUES, KIND_ATTRIBUTES, SubjectKind, canonical_attribute


class Goal(Enum):
    ALLOW = "allow"
    DENY = "deny"
    ASK = "ask"


class Origin(Enum):
    BUILTIN = "BUILTIN"
    USER_FILE = "USER_FILE"
    SYNTHESIZED = "SYNTHESIZED"


# Surface path-term keywords to subject kinds (users are never named in paths).
TERM_KINDS = {"agent": SubjectKind.AGENT, "tool": SubjectKind.TOOL, "db": SubjectKind.RAG_DB}
KIND_TERMS = {v: k for k, v in TERM_KINDS.items()}


@dataclass(frozen=True)
class TypedTerm:
    kind: SubjectKind
    var: str  # without the leading '$'


@dataclass(frozen=True)
class NamedTerm:
    kind: SubjectKind
    name: str


@dataclass(frozen=True)
class Wildcard:
    pass


NodeTerm = Union[TypedTerm, NamedTerm, Wildcard]


@dataclass(frozen=True)
class PathPattern:
    terms: tuple[NodeTerm, ...]

    def variables(self) -> list[str]:
        return [t.var for t in self.terms if isinstance(t, TypedTerm)]

    def wildcard_count(self) -> int:
        return sum(isinstance(t, Wildcard) for t in self.terms)


@dataclass(frozen=True)
class AttrCmp:
    var: str
    attribute: str
    op: str  # "==" or "!="
    value: str


@dataclass(frozen=True)
class ArgMatch:
    var: str
    arg_path: tuple[str, ...]
    pattern: str


@dataclass(frozen=True)
class And:
    items: tuple["RuleExpr", ...]


@dataclass(frozen=True)
class Or:
    items: tuple["RuleExpr", ...]


@dataclass(frozen=True)
class Not:
    expr: "RuleExpr"


RuleExpr = Union[AttrCmp, ArgMatch, And, Or, Not]


@dataclass(frozen=True)
class Policy:
    goal: Goal
    path: PathPattern
    rule: RuleExpr | None = None
    origin: Origin = field(default=Origin.USER_FILE, compare=False)
    source_text: str = field(default="", compare=False)


class PolicyError(ValueError):
    """Base class for policy language failures."""


class PolicySyntaxError(PolicyError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class UnknownGoal(PolicyError):
    pass


class UnboundVariable(PolicyError):
    pass


class BadRegex(PolicyError):
    pass


# ---------------------------------------------------------------------------
# Portable regex subset

_REGEX_FORBIDDEN = re.compile(r"\\[1-9]|\(\?")


def check_regex(pattern: str) -> None:
    """Reject regexes outside the portable subset (no backrefs/lookaround)."""
    if _REGEX_FORBIDDEN.search(pattern):
        raise BadRegex(f"unsupported regex construct in {pattern!r}")
    try:
        re.compile(pattern)
    except re.error as exc:
        raise BadRegex(f"bad regex {pattern!r}: {exc}") from exc


@lru_cache(maxsize=512)
def compiled_regex(pattern: str) -> "re.Pattern[str]":
    check_regex(pattern)
    return re.compile(pattern)


def regex_search(pattern: str, text: str) -> bool:
    """Unanchored search; ^/$ in the pattern anchor explicitly."""
    return compiled_regex(pattern).search(text) is not None


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<arrow>->)
  | (?P<cmp>==|!=)
  | (?P<string>"(?:\\.|[^"\\])*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[():.$!*])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str, line_offsets: list[tuple[int, int]]) -> list[_Token]:
    # line_offsets maps character positions back to (line, col) origins.
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            line, col = _locate(line_offsets, pos)
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", line, col)
        pos = m.end()
        kind = m.lastgroup or ""
        if kind == "ws":
            continue
        line, col = _locate(line_offsets, m.start())
        tokens.append(_Token(kind, m.group(), line, col))
    return tokens


def _locate(line_offsets: list[tuple[int, int]], pos: int) -> tuple[int, int]:
    for start, line in reversed(line_offsets):
        if pos >= start:
            return line, pos - start + 1
    return 1, pos + 1


def _unquote(raw: str) -> str:
    body = raw[1:-1]
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body) and body[i + 1] in ('"', "\\"):
            out.append(body[i + 1])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


class _TokenStream:
    def __init__(self, tokens: list[_Token], end_line: int):
        self._tokens = tokens
        self._pos = 0
        self._end_line = end_line

    def peek(self) -> _Token | None:
        return self._tokens[self._pos] if self._pos < len(self._tokens) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise PolicySyntaxError("unexpected end of input", self._end_line, 1)
        self._pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise PolicySyntaxError(f"expected {text!r}, got {tok.text!r}", tok.line, tok.col)
        return tok

    def at_end(self) -> bool:
        return self._pos >= len(self._tokens)


# ---------------------------------------------------------------------------
# Parser

def _split_groups(text: str) -> dict[str, tuple[str, list[tuple[int, int]], int]]:
    """Split a policy into Goal/Path/Rule line groups.

    Lines not starting with a group keyword continue the previous group, so
    long rules may wrap.  Returns per-group body text plus position maps for
    error reporting.
    """
    groups: dict[str, tuple[list[str], list[tuple[int, int]]]] = {}
    order: list[str] = []
    current: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        first = stripped.split(None, 1)[0]
        if first in ("Goal", "Path", "Rule"):
            if first in groups:
                raise PolicySyntaxError(f"duplicate {first} line", lineno, 1)
            lead = len(line) - len(line.lstrip()) + len(first)
            groups[first] = ([stripped[len(first):]], [(-lead, lineno)])
            order.append(first)
            current = first
        elif current is None:
            raise PolicySyntaxError("expected a Goal line", lineno, 1)
        else:
            parts, offsets = groups[current]
            offsets.append((len("\n".join(parts)) + 1, lineno))
            parts.append(stripped)
    if order[:1] != ["Goal"]:
        raise PolicySyntaxError("policy must start with a Goal line", 1, 1)
    expected = ["Goal", "Path"] + (["Rule"] if "Rule" in groups else [])
    if order != expected:
        raise PolicySyntaxError(
            f"line groups must appear in order Goal, Path[, Rule]; got {order}", 1, 1
        )
    out: dict[str, tuple[str, list[tuple[int, int]], int]] = {}
    for key, (parts, offsets) in groups.items():
        body = "\n".join(parts)
        out[key] = (body, offsets, offsets[-1][1])
    return out


def _parse_path(stream: _TokenStream) -> PathPattern:
    terms: list[NodeTerm] = []
    while True:
        tok = stream.next()
        if tok.text == "*":
            terms.append(Wildcard())
        elif tok.kind == "ident" and tok.text in TERM_KINDS:
            kind = TERM_KINDS[tok.text]
            stream.expect(":")
            nxt = stream.next()
            if nxt.text == "$":
                var = stream.next()
                if var.kind != "ident":
                    raise PolicySyntaxError("expected variable name after '$'", var.line, var.col)
                terms.append(TypedTerm(kind, var.text))
            elif nxt.kind == "ident":
                terms.append(NamedTerm(kind, nxt.text))
            else:
                raise PolicySyntaxError(f"expected node name, got {nxt.text!r}", nxt.line, nxt.col)
        else:
            raise PolicySyntaxError(
                f"expected path term (agent:/tool:/db:/*), got {tok.text!r}", tok.line, tok.col
            )
        if stream.at_end():
            break
        stream.expect("->")
    return PathPattern(terms=tuple(terms))


def _parse_expr(stream: _TokenStream) -> RuleExpr:
    expr = _parse_or(stream)
    tok = stream.peek()
    if tok is not None:
        raise PolicySyntaxError(f"unexpected token {tok.text!r}", tok.line, tok.col)
    return expr


def _parse_or(stream: _TokenStream) -> RuleExpr:
    items = [_parse_and(stream)]
    while (tok := stream.peek()) is not None and tok.text == "OR":
        stream.next()
        items.append(_parse_and(stream))
    return items[0] if len(items) == 1 else Or(tuple(items))


def _parse_and(stream: _TokenStream) -> RuleExpr:
    items = [_parse_not(stream)]
    while (tok := stream.peek()) is not None and tok.text == "AND":
        stream.next()
        items.append(_parse_not(stream))
    return items[0] if len(items) == 1 else And(tuple(items))


def _parse_not(stream: _TokenStream) -> RuleExpr:
    tok = stream.peek()
    if tok is not None and tok.text == "!":
        stream.next()
        return Not(_parse_not(stream))
    return _parse_atom(stream)


def _parse_atom(stream: _TokenStream) -> RuleExpr:
    tok = stream.next()
    if tok.text == "(":
        inner = _parse_or(stream)
        stream.expect(")")
        return inner
    if tok.kind != "ident":
        raise PolicySyntaxError(f"expected variable, got {tok.text!r}", tok.line, tok.col)
    var = tok.text
    stream.expect(".")
    name = stream.next()
    if name.kind != "ident":
        raise PolicySyntaxError(f"expected attribute name, got {name.text!r}", name.line, name.col)
    if name.text == "args":
        arg_path: list[str] = []
        while True:
            stream.expect(".")
            part = stream.next()
            if part.kind != "ident":
                raise PolicySyntaxError(
                    f"expected argument key, got {part.text!r}", part.line, part.col
                )
            if part.text == "match":
                if not arg_path:
                    raise PolicySyntaxError("empty argument path", part.line, part.col)
                stream.expect("(")
                pat = stream.next()
                if pat.kind != "string":
                    raise PolicySyntaxError("expected regex string", pat.line, pat.col)
                stream.expect(")")
                pattern = _unquote(pat.text)
                check_regex(pattern)
                return ArgMatch(var=var, arg_path=tuple(arg_path), pattern=pattern)
            arg_path.append(part.text)
    attr = canonical_attribute(name.text)
    if attr not in ATTRIBUTE_VALUES:
        raise PolicySyntaxError(f"unknown attribute {name.text!r}", name.line, name.col)
    op = stream.next()
    if op.text not in ("==", "!="):
        raise PolicySyntaxError(f"expected == or !=, got {op.text!r}", op.line, op.col)
    value = stream.next()
    if value.kind != "string":
        raise PolicySyntaxError("expected quoted value", value.line, value.col)
    return AttrCmp(var=var, attribute=attr, op=op.text, value=_unquote(value.text))


def _rule_variables(rule: RuleExpr) -> set[str]:
    if isinstance(rule, (AttrCmp, ArgMatch)):
        return {rule.var}
    if isinstance(rule, Not):
        return _rule_variables(rule.expr)
    return set().union(*(_rule_variables(item) for item in rule.items))


def parse_policy(text: str, origin: Origin = Origin.USER_FILE) -> Policy:
    """Parse one policy; raises on syntax errors with line/column."""
    groups = _split_groups(text)
    goal_body, goal_offsets, goal_line = groups["Goal"]
    goal_word = goal_body.strip()
    try:
        goal = Goal(goal_word.lower())
    except ValueError:
        raise UnknownGoal(f"line {goal_line}: unknown goal {goal_word!r}") from None
    if goal_word != goal.value:
        raise UnknownGoal(f"line {goal_line}: unknown goal {goal_word!r} (goals are lowercase)")

    path_body, path_offsets, path_line = groups["Path"]
    path = _parse_path(_TokenStream(_tokenize(path_body, path_offsets), path_line))

    rule: RuleExpr | None = None
    if "Rule" in groups:
        rule_body, rule_offsets, rule_line = groups["Rule"]
        rule = _parse_expr(_TokenStream(_tokenize(rule_body, rule_offsets), rule_line))
        declared = set(path.variables())
        unbound = _rule_variables(rule) - declared
        if unbound:
            raise UnboundVariable(f"rule variables {sorted(unbound)} not declared in path")
    return Policy(goal=goal, path=path, rule=rule, origin=origin, source_text=text)


def parse_policy_pack(text: str, origin: Origin = Origin.USER_FILE) -> list[Policy]:
    """Parse a pack file: policies separated by blank lines, ``#`` comments."""
    blocks: list[list[str]] = [[]]
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            continue
        if not stripped:
            if blocks[-1]:
                blocks.append([])
            continue
        blocks[-1].append(line)
    return [parse_policy("\n".join(block), origin=origin) for block in blocks if block]


# ---------------------------------------------------------------------------
# Rendering

def render_term(term: NodeTerm) -> str:
    if isinstance(term, Wildcard):
        return "*"
    if isinstance(term, TypedTerm):
        return f"{KIND_TERMS[term.kind]}:${term.var}"
    return f"{KIND_TERMS[term.kind]}:{term.name}"


def _render_expr(expr: RuleExpr, parent: str = "top") -> str:
    # parent names the surrounding operator; parenthesize when the child
    # binds more loosely than its context, and also around a nested
    # same-operator node so the parse tree survives a round-trip.
    if isinstance(expr, AttrCmp):
        return f"{expr.var}.{expr.attribute}{expr.op}{_quote(expr.value)}"
    if isinstance(expr, ArgMatch):
        return f"{expr.var}.args.{'.'.join(expr.arg_path)}.match({_quote(expr.pattern)})"
    if isinstance(expr, Not):
        return "!" + _render_expr(expr.expr, "not")
    if isinstance(expr, And):
        body = " AND ".join(_render_expr(item, "and") for item in expr.items)
        return f"({body})" if parent in ("and", "not") else body
    if isinstance(expr, Or):
        body = " OR ".join(_render_expr(item, "or") for item in expr.items)
        return f"({body})" if parent in ("or", "and", "not") else body
    raise TypeError(f"unknown rule node {expr!r}")


def render_policy(policy: Policy) -> str:
    """Canonical text form; ``parse_policy`` of the output is structurally
    equal to the input."""
    lines = [
        f"Goal {policy.goal.value}",
        "Path " + " -> ".join(render_term(t) for t in policy.path.terms),
    ]
    if policy.rule is not None:
        lines.append("Rule " + _render_expr(policy.rule))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Specificity and ordering

def rule_leaf_count(rule: RuleExpr | None) -> int:
    if rule is None:
        return 0
    if isinstance(rule, (AttrCmp, ArgMatch)):
        return 1
    if isinstance(rule, Not):
        return rule_leaf_count(rule.expr)
    return sum(rule_leaf_count(item) for item in rule.items)


def specificity(policy: Policy) -> tuple[int, int, int, int]:
    """(named terms, typed terms, -wildcards, rule leaves); higher sorts first."""
    named = sum(isinstance(t, NamedTerm) for t in policy.path.terms)
    typed = sum(isinstance(t, TypedTerm) for t in policy.path.terms)
    wild = policy.path.wildcard_count()
    return (named, typed, -wild, rule_leaf_count(policy.rule))


def sort_policies(policies: Iterable[Policy]) -> list[Policy]:
    """Evaluation order: synthesized first, then specificity descending,
    ties broken by original position (stable)."""
    def key(item: tuple[int, Policy]):
        index, policy = item
        named, typed, neg_wild, leaves = specificity(policy)
        return (
            0 if policy.origin is Origin.SYNTHESIZED else 1,
            -named, -typed, -neg_wild, -leaves,
            index,
        )
    return [p for _, p in sorted(enumerate(policies), key=key)]


# ---------------------------------------------------------------------------
# Linting

@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    policy_index: int


def lint_policies(policies: list[Policy], schema: Mapping = KIND_ATTRIBUTES) -> list[Diagnostic]:
    """Static checks over a policy pack; warnings only, never failures."""
    diags: list[Diagnostic] = []
    for idx, policy in enumerate(policies):
        var_kinds = {t.var: t.kind for t in policy.path.terms if isinstance(t, TypedTerm)}
        if all(isinstance(t, Wildcard) for t in policy.path.terms):
            diags.append(Diagnostic("WildcardOnlyPath", "path contains only wildcards", idx))
        for leaf in _iter_leaves(policy.rule):
            if isinstance(leaf, AttrCmp):
                kind = var_kinds.get(leaf.var)
                if kind is not None and leaf.attribute not in schema.get(kind, ()):  # type: ignore[arg-type]
                    diags.append(Diagnostic(
                        "InapplicableAttribute",
                        f"{leaf.var}.{leaf.attribute} not applicable to {kind.value}",
                        idx,
                    ))
                if leaf.value not in ATTRIBUTE_VALUES.get(leaf.attribute, frozenset()):
                    diags.append(Diagnostic(
                        "UnknownValue",
                        f"{leaf.var}.{leaf.attribute} compared to {leaf.value!r} "
                        f"outside {sorted(ATTRIBUTE_VALUES.get(leaf.attribute, []))}",
                        idx,
                    ))
        for earlier_idx in range(idx):
            earlier = policies[earlier_idx]
            if (earlier.path == policy.path
                    and earlier.goal in (Goal.ALLOW, Goal.DENY)
                    and (earlier.rule is None or earlier.rule == policy.rule)):
                diags.append(Diagnostic(
                    "UnreachablePolicy",
                    f"shadowed by earlier policy #{earlier_idx} with identical path",
                    idx,
                ))
                break
    return diags


def _iter_leaves(rule: RuleExpr | None):
    if rule is None:
        return
    if isinstance(rule, (AttrCmp, ArgMatch)):
        yield rule
    elif isinstance(rule, Not):
        yield from _iter_leaves(rule.expr)
    else:
        for item in rule.items:
            yield from _iter_leaves(item)
