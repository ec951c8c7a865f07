"""absgate: selective abstraction for long-form text generation.

Replaces low-confidence atomic claims with less specific but more reliable
generalizations, evaluates the resulting risk-coverage trade-off, and
selects confidence thresholds with a distribution-free guarantee.
"""

from .analytics import (
    RCCurve,
    RCPoint,
    SweepStat,
    aurc,
    auroc,
    build_rc_curve,
    improvement,
    matched_coverage_gap,
    render_rc_svg,
)
from .backend import (
    CachedBackend,
    ChatRequest,
    ChatResponse,
    HttpBackend,
    MockBackend,
    logprob_confidence,
    mean_token_logprob,
    p_true_confidence,
    request_digest,
)
from .conformal import (
    CalibrationRecord,
    MonteCarloReport,
    ThresholdResult,
    calibrate_threshold,
    critical_threshold,
    epsilon,
    monte_carlo_validate,
    select_threshold,
)
from .domain import (
    TOP,
    AbstractionLevel,
    AbstractionSequence,
    Atom,
    Claim,
    CorrectnessLabel,
    Evidence,
    PromptRecord,
    ResponseText,
    SelectionResult,
    normalize_claim,
    validate_confidence,
)
from .factcheck import (
    AgentVerdict,
    FixtureWikiTransport,
    HttpWikiTransport,
    LabelStore,
    RiskReport,
    WikiClient,
    WikiPage,
    rank_page_spans,
    risk,
    run_fact_agent,
)
from .infomeasure import (
    CountingQuestions,
    EntityCounts,
    FixtureCounts,
    SparqlCounts,
    coverage,
    generate_counting_questions,
    information,
)
from .pipeline import (
    Pipeline,
    SAResult,
    attainable_thetas,
    baseline_redaction,
    select_abstraction,
)
from .special import beta_cdf, beta_quantile
from .templates import TEMPLATES, render_template

__version__ = "0.1.0"
