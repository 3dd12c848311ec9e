"""Pairwise learning-curve ranking with early-termination replay."""

from ._core import (
    Corpus,
    EvolutionConfig,
    EvolutionResult,
    ModelBank,
    ModelConfig,
    RankerParams,
    RankingEvalResult,
    ReplayDecision,
    ReplayResult,
    ResultRow,
    RunRecord,
    TerminationPolicy,
    TraceEntry,
    load_jsonl,
    make_corpus,
    pair_probability,
    pair_target,
    parse_results_csv,
    ranking_chart_svg,
    ranking_experiment,
    ranking_result_rows,
    random_search_replay,
    regularized_evolution,
    replay_chart_svg,
    replay_result_row,
    results_csv,
    save_checkpoint,
    save_jsonl,
    spearman,
    synth_generate,
    train,
    load_checkpoint,
)

__all__ = [
    "Corpus",
    "EvolutionConfig",
    "EvolutionResult",
    "ModelBank",
    "ModelConfig",
    "RankerParams",
    "RankingEvalResult",
    "ReplayDecision",
    "ReplayResult",
    "ResultRow",
    "RunRecord",
    "TerminationPolicy",
    "TraceEntry",
    "load_checkpoint",
    "load_jsonl",
    "make_corpus",
    "pair_probability",
    "pair_target",
    "parse_results_csv",
    "ranking_chart_svg",
    "ranking_experiment",
    "ranking_result_rows",
    "random_search_replay",
    "regularized_evolution",
    "replay_chart_svg",
    "replay_result_row",
    "results_csv",
    "save_checkpoint",
    "save_jsonl",
    "spearman",
    "synth_generate",
    "train",
]
