"""Diversity and faithfulness scoring through a pluggable judge."""

from .backends import JudgeBackend, MockJudge, RemoteConfig, RemoteJudge, make_backend
from .metrics import (
    Clustering,
    FaithfulnessLabel,
    FaithfulnessReport,
    PromptGroup,
    SimilarityJudgment,
    cluster_responses,
    dataset_diversity,
    diversity_score,
    faithful_diversity,
    faithfulness_rates,
    groups_diversity,
    groups_faithful_diversity,
    label_groups,
    rates_from_labels,
    sample_groups,
    shannon_entropy,
)
from .prompts import (
    FAITHFULNESS_TEMPLATE,
    SIMILARITY_TEMPLATE,
    JudgePrompt,
    Response,
    load_template,
    make_response,
    parse_faithfulness,
    parse_similarity,
    render_prompt,
    render_response,
)

__all__ = [
    "Clustering",
    "FAITHFULNESS_TEMPLATE",
    "FaithfulnessLabel",
    "FaithfulnessReport",
    "JudgeBackend",
    "JudgePrompt",
    "MockJudge",
    "PromptGroup",
    "RemoteConfig",
    "RemoteJudge",
    "Response",
    "SIMILARITY_TEMPLATE",
    "SimilarityJudgment",
    "cluster_responses",
    "dataset_diversity",
    "diversity_score",
    "faithful_diversity",
    "faithfulness_rates",
    "groups_diversity",
    "groups_faithful_diversity",
    "label_groups",
    "load_template",
    "make_backend",
    "make_response",
    "parse_faithfulness",
    "parse_similarity",
    "rates_from_labels",
    "render_prompt",
    "render_response",
    "sample_groups",
    "shannon_entropy",
]
