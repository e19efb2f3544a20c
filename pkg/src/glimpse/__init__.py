"""Parallel decoding with verified exact commits and approximate lookahead.

One fused model call per iteration scores the next autoregressive token and
a window of lookahead positions simultaneously; guesses confirmed by the
fresh predictions commit as exact tokens, and the remaining window is
exposed as an approximate glimpse of the continuation that the answer phase
may consume before decoding finishes.
"""

__version__ = "0.1.0"

from glimpse.backends import (
    BackendSpec,
    StepOutput,
    greedy_pick,
    make_counting_backend,
    make_ngram_backend,
    make_scripted_backend,
    make_toy_transformer,
)
from glimpse.buffer import BatchBuffers, DecodeBuffer, VerifyOutcome, init_buffer, update, verify
from glimpse.cache import CacheBuffer, alloc, plan_input_padding, plan_kv_padding
from glimpse.engine import (
    DecodeConfig,
    DecodeResult,
    StopDecision,
    answer_phase,
    ar_baseline,
    calibrate_iteration_cap,
    check_stop,
    decode_with_answer,
    iterate_once,
    probe_score,
    run_rationale,
    run_rationale_batch,
    truncated_cot,
)

__all__ = [
    "BackendSpec",
    "BatchBuffers",
    "CacheBuffer",
    "DecodeBuffer",
    "DecodeConfig",
    "DecodeResult",
    "StepOutput",
    "StopDecision",
    "VerifyOutcome",
    "alloc",
    "answer_phase",
    "ar_baseline",
    "calibrate_iteration_cap",
    "check_stop",
    "decode_with_answer",
    "greedy_pick",
    "init_buffer",
    "iterate_once",
    "make_counting_backend",
    "make_ngram_backend",
    "make_scripted_backend",
    "make_toy_transformer",
    "plan_input_padding",
    "plan_kv_padding",
    "probe_score",
    "run_rationale",
    "run_rationale_batch",
    "truncated_cot",
    "update",
    "verify",
]
