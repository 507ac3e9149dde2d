"""Security attribute taxonomy for agent-system subjects.

Subjects (users, agents, tools, RAG databases) carry categorical security
attributes.  Tools are described by five attributes (object, action,
sensitivity, integrity, privacy), agents by integrity alone, RAG databases
by integrity and privacy, and users by nothing.  This module validates raw
label maps into canonical form and audits two independent labelings of the
same subject set with Cohen's kappa.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping


class SubjectKind(Enum):
    USER = "USER"
    AGENT = "AGENT"
    TOOL = "TOOL"
    RAG_DB = "RAG_DB"


# Allowed values per attribute name (canonical spelling).
ATTRIBUTE_VALUES: Mapping[str, frozenset[str]] = MappingProxyType({
    "object": frozenset({"LOCAL", "EXTERNAL", "PHYSICAL"}),
    "action": frozenset({"READ", "WRITE", "EXECUTE"}),
    "sensitivity": frozenset({"LOW", "MODERATE", "HIGH"}),
    "integrity": frozenset({"TRUSTED", "UNFILTERED"}),
    "privacy": frozenset({"GENERAL", "PERSONAL"}),
})

# Attributes each subject kind must carry, exactly.
KIND_ATTRIBUTES: Mapping[SubjectKind, frozenset[str]] = MappingProxyType({
    SubjectKind.USER: frozenset(),
    SubjectKind.AGENT: frozenset({"integrity"}),
    SubjectKind.TOOL: frozenset({"object", "action", "sensitivity", "integrity", "privacy"}),
    SubjectKind.RAG_DB: frozenset({"integrity", "privacy"}),
})

# Historical spelling kept as an input alias; never emitted.
ATTRIBUTE_ALIASES: Mapping[str, str] = MappingProxyType({"integrality": "integrity"})


class LabelError(ValueError):
    """Base class for labeling failures."""


class UnknownAttribute(LabelError):
    pass


class UnknownValue(LabelError):
    pass


class MissingAttribute(LabelError):
    pass


class LengthMismatch(LabelError):
    pass


class EmptyInput(LabelError):
    pass


class CoverageMismatch(LabelError):
    pass


def canonical_attribute(name: str) -> str:
    """Fold aliases and case into the canonical attribute name."""
    lowered = name.strip().lower()
    return ATTRIBUTE_ALIASES.get(lowered, lowered)


@dataclass(frozen=True)
class SubjectLabel:
    """Canonical attribute bundle for one subject."""

    name: str
    kind: SubjectKind
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", MappingProxyType(dict(self.attributes)))

    def get(self, attribute: str) -> str | None:
        return self.attributes.get(canonical_attribute(attribute))

    def __hash__(self) -> int:
        return hash((self.name, self.kind, tuple(sorted(self.attributes.items()))))


def validate_label(kind: SubjectKind, raw: Mapping[str, str], name: str = "") -> SubjectLabel:
    """Validate a flat string map into a canonical ``SubjectLabel``.

    Attribute names are case-folded and the ``integrality`` alias becomes
    ``integrity``; values are upper-cased.  Raises ``UnknownAttribute`` for
    attributes not applicable to *kind*, ``UnknownValue`` for values outside
    the attribute's enum, and ``MissingAttribute`` when a required attribute
    is absent.
    """
    allowed = KIND_ATTRIBUTES[kind]
    out: dict[str, str] = {}
    for raw_name, raw_value in raw.items():
        attr = canonical_attribute(raw_name)
        if attr not in ATTRIBUTE_VALUES:
            raise UnknownAttribute(f"{name or kind.value}: unknown attribute {raw_name!r}")
        if attr not in allowed:
            raise UnknownAttribute(
                f"{name or kind.value}: attribute {attr!r} not applicable to {kind.value}"
            )
        value = str(raw_value).strip().upper()
        if value not in ATTRIBUTE_VALUES[attr]:
            raise UnknownValue(
                f"{name or kind.value}: {attr}={raw_value!r} outside "
                f"{sorted(ATTRIBUTE_VALUES[attr])}"
            )
        out[attr] = value
    missing = allowed - out.keys()
    if missing:
        raise MissingAttribute(f"{name or kind.value}: missing {sorted(missing)}")
    return SubjectLabel(name=name, kind=kind, attributes=out)


def user_label(name: str) -> SubjectLabel:
    return SubjectLabel(name=name, kind=SubjectKind.USER)


class Provenance(Enum):
    HUMAN = "HUMAN"
    LLM = "LLM"
    HYBRID = "HYBRID"


@dataclass(frozen=True)
class LabelSet:
    """Immutable named collection of validated subject labels."""

    entries: Mapping[str, SubjectLabel]
    provenance: Mapping[str, Provenance]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))
        object.__setattr__(self, "provenance", MappingProxyType(dict(self.provenance)))

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, name: str) -> SubjectLabel:
        return self.entries[name]

    @classmethod
    def from_mapping(cls, doc: Mapping, default_provenance: Provenance = Provenance.HYBRID) -> "LabelSet":
        known_top = {"subjects", "provenance"}
        unknown = set(doc) - known_top
        if unknown:
            raise LabelError(f"unknown top-level keys {sorted(unknown)}")
        if "subjects" not in doc:
            raise LabelError("missing top-level 'subjects'")
        prov_default = doc.get("provenance", default_provenance.value)
        entries: dict[str, SubjectLabel] = {}
        provenance: dict[str, Provenance] = {}
        for item in doc["subjects"]:
            unknown = set(item) - {"name", "kind", "labels", "provenance"}
            if unknown:
                raise LabelError(f"unknown subject keys {sorted(unknown)}")
            name = item["name"]
            if name in entries:
                raise LabelError(f"duplicate subject {name!r}")
            kind = SubjectKind[item.get("kind", "TOOL")]
            entries[name] = validate_label(kind, item.get("labels", {}), name=name)
            provenance[name] = Provenance(item.get("provenance", prov_default))
        return cls(entries=entries, provenance=provenance)

    @classmethod
    def from_file(cls, path: str | Path, default_provenance: Provenance = Provenance.HYBRID) -> "LabelSet":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh), default_provenance)


def cohens_kappa(ratings_a: Iterable[str], ratings_b: Iterable[str]) -> float:
    """Two-rater Cohen's kappa with expected agreement from marginals.

    Returns exactly 1.0 for identical ratings, including the degenerate
    single-category case where expected agreement is also 1.
    """
    a = list(ratings_a)
    b = list(ratings_b)
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} ratings")
    if not a:
        raise EmptyInput("no ratings")
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    counts_a = Counter(a)
    counts_b = Counter(b)
    p_e = sum(counts_a[c] * counts_b.get(c, 0) for c in counts_a) / (n * n)
    if p_e == 1.0:
        # Only reachable with p_o == 1 (both raters constant on one category).
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class KappaReport:
    per_attribute: Mapping[str, float]
    overall: float
    item_count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_attribute", MappingProxyType(dict(self.per_attribute)))


def kappa_report(set_a: LabelSet, set_b: LabelSet) -> KappaReport:
    """Agreement audit between two labelings of the same subjects.

    Per-attribute kappa is computed over the subjects carrying that
    attribute; the overall figure pools every (subject, attribute) judgment
    into one rating vector over the union category space.
    """
    if set(set_a.entries) != set(set_b.entries):
        only_a = sorted(set(set_a.entries) - set(set_b.entries))
        only_b = sorted(set(set_b.entries) - set(set_a.entries))
        raise CoverageMismatch(f"subject sets differ (only_a={only_a}, only_b={only_b})")
    names = sorted(set_a.entries)
    for name in names:
        if set_a[name].kind is not set_b[name].kind:
            raise CoverageMismatch(f"kind mismatch for {name!r}")
    per_attribute: dict[str, float] = {}
    pooled_a: list[str] = []
    pooled_b: list[str] = []
    for attr in ("object", "action", "sensitivity", "integrity", "privacy"):
        col_a = [set_a[n].attributes[attr] for n in names if attr in set_a[n].attributes]
        col_b = [set_b[n].attributes[attr] for n in names if attr in set_b[n].attributes]
        if col_a:
            per_attribute[attr] = cohens_kappa(col_a, col_b)
            pooled_a.extend(col_a)
            pooled_b.extend(col_b)
    overall = cohens_kappa(pooled_a, pooled_b)
    return KappaReport(per_attribute=per_attribute, overall=overall, item_count=len(names))
