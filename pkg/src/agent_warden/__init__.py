"""Flow-graph mandatory access control for scripted LLM-agent systems."""

from .labels import (
    KappaReport,
    LabelSet,
    SubjectKind,
    SubjectLabel,
    cohens_kappa,
    kappa_report,
    validate_label,
)
from .policy import (
    Goal,
    Origin,
    Policy,
    parse_policy,
    parse_policy_pack,
    render_policy,
    sort_policies,
    specificity,
)
from .view import SystemView, begin_round
from .engine import (
    AskChoice,
    Decision,
    Outcome,
    PolicyDB,
    decide,
    match_paths,
    resolve_ask,
    synthesize_allow_policy,
)
from .memory import EntityDictionary, SessionStore, UserSession, seed_round, select_context
from .harness import Metrics, Mode, Scenario, load_scenario, run_scenario

__version__ = "0.1.0"
