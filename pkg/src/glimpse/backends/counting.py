"""Arithmetic-sequence backend: the next token continues a digit chain.

The model emits ``(d + gap) mod modulus`` where ``d`` is the most recent
digit token in the context and ``gap`` is the number of positions since it.
On digit-only contexts this is exactly ``next = (last + 1) mod modulus``;
non-digit tokens (PAD, EOS) preserve the position count instead of
restarting it, so the chain keeps counting across masked-out filler.  A
context with no digit at all scores token 0.

Deterministic and cheap, which makes it the workhorse for long-generation
benchmarks and loop-convergence tests.
"""

from __future__ import annotations

import numpy as np

from glimpse.backends.base import (
    BackendSpec,
    SequentialBatchMixin,
    StepOutput,
    TokenSeq,
    check_forward_args,
)
from glimpse.errors import ContractError


class CountingBackend(SequentialBatchMixin):
    def __init__(self, modulus: int = 10) -> None:
        if modulus < 2:
            raise ContractError("modulus must be >= 2")
        self.modulus = modulus
        self.spec = BackendSpec(
            vocab_size=modulus + 2,
            pad_id=modulus,
            eos_id=modulus + 1,
        )

    def forward(
        self, context: TokenSeq, block_len: int, cache=None
    ) -> StepOutput:
        if cache is not None:
            raise ContractError("counting backend does not support a cache")
        check_forward_args(self.spec, context, block_len)
        m = self.modulus
        ids = np.asarray(context, dtype=np.int64)
        n = ids.shape[0]
        # last_digit[s] / last_pos[s]: value and index of the most recent
        # digit at or before position s; -1 when none exists.
        is_digit = ids < m
        idx = np.where(is_digit, np.arange(n), -1)
        last_pos = np.maximum.accumulate(idx)
        split = n - block_len
        rows = np.zeros((block_len, self.spec.vocab_size), dtype=np.float64)
        ends = np.arange(split, n)
        pos = last_pos[ends]
        has_digit = pos >= 0
        # Predicting position end+1, so the gap from the last digit is
        # (end + 1) - its position.
        gap = ends + 1 - np.where(has_digit, pos, 0)
        digits = np.where(has_digit, (ids[np.maximum(pos, 0)] + gap) % m, 0)
        rows[np.arange(block_len), digits] = 1.0
        return StepOutput(rows=rows)


def make_counting_backend(modulus: int = 10) -> CountingBackend:
    return CountingBackend(modulus)
