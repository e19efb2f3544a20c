"""Causal-LM backend interface and the greedy token picker.

A backend maps a token context to next-token score rows for the last
``block_len`` positions of the context.  ``block_len = 1`` is ordinary
autoregressive decoding; larger blocks score several consecutive positions
in one call, conditioning later positions on whatever tokens currently sit
in the context (the lookahead window).

All backends are deterministic: identical ``(context, block_len, cache
contents)`` produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from glimpse.errors import ContractError

if TYPE_CHECKING:
    from glimpse.cache import CacheSlot

TokenSeq = Sequence[int]


@dataclass(frozen=True)
class BackendSpec:
    """Static description of a backend.

    Attributes:
        vocab_size: Number of token ids; all ids are in ``[0, vocab_size)``.
        pad_id: Reserved padding token id.
        eos_id: Reserved end-of-sequence token id (distinct from ``pad_id``).
        supports_cache: Whether ``forward`` accepts a key/value cache slot.
        supports_attention: Whether step outputs carry an attention summary.
        n_layers / n_heads / model_dim / max_len: Transformer shape fields;
            zero for table- or rule-based backends.
    """

    vocab_size: int
    pad_id: int
    eos_id: int
    supports_cache: bool = False
    supports_attention: bool = False
    n_layers: int = 0
    n_heads: int = 0
    model_dim: int = 0
    max_len: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size <= 0:
            raise ContractError("vocab_size must be positive")
        for name in ("pad_id", "eos_id"):
            tok = getattr(self, name)
            if not 0 <= tok < self.vocab_size:
                raise ContractError(f"{name}={tok} outside vocab of size {self.vocab_size}")
        if self.pad_id == self.eos_id:
            raise ContractError("pad_id and eos_id must be distinct")
        if self.n_heads and self.model_dim % self.n_heads != 0:
            raise ContractError("model_dim must divide evenly into heads")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads if self.n_heads else 0


@dataclass
class StepOutput:
    """Result of one forward call.

    Attributes:
        rows: ``[block_len, vocab_size]`` float array; ``rows[j]`` scores the
            token following context position ``split + j`` where
            ``split = len(context) - block_len``.
        attention_summary: Optional ``[block_len, len(context)]`` array of
            head-averaged attention weights from each queried position onto
            every visible context position; rows sum to 1 over unmasked
            positions.  ``None`` for backends without attention.
        new_kv: For cache-capable backends, per-layer ``(keys, values)``
            arrays for the context positions computed in this call, each
            shaped ``[n_new, n_heads, head_dim]``.  The caller decides which
            prefix of these to persist.
        new_start: Context index of the first freshly computed position
            (equals the cache slot's valid length, or 0 without a cache).
    """

    rows: np.ndarray
    attention_summary: np.ndarray | None = None
    new_kv: list[tuple[np.ndarray, np.ndarray]] | None = None
    new_start: int = 0


@runtime_checkable
class Backend(Protocol):
    """Anything that can score next tokens for the tail of a context."""

    spec: BackendSpec

    def forward(
        self,
        context: TokenSeq,
        block_len: int,
        cache: "CacheSlot | None" = None,
    ) -> StepOutput: ...

    def forward_batch(
        self,
        contexts: Sequence[TokenSeq],
        block_lens: Sequence[int],
        slots: Sequence["CacheSlot | None"] | None = None,
    ) -> list[StepOutput]: ...


class SequentialBatchMixin:
    """Default batch path: one independent forward per instance."""

    def forward_batch(
        self,
        contexts: Sequence[TokenSeq],
        block_lens: Sequence[int],
        slots: Sequence["CacheSlot | None"] | None = None,
    ) -> list[StepOutput]:
        if slots is None:
            slots = [None] * len(contexts)
        if not len(contexts) == len(block_lens) == len(slots):
            raise ContractError("forward_batch arguments must have equal lengths")
        return [
            self.forward(ctx, bl, slot)  # type: ignore[attr-defined]
            for ctx, bl, slot in zip(contexts, block_lens, slots)
        ]


def check_forward_args(spec: BackendSpec, context: TokenSeq, block_len: int) -> None:
    """Shared precondition checks for every backend's ``forward``."""
    if len(context) == 0:
        raise ContractError("context must be nonempty")
    if block_len < 1:
        raise ContractError("block_len must be >= 1")
    if block_len > len(context):
        raise ContractError(
            f"block_len {block_len} exceeds context length {len(context)}"
        )
    for tok in context:
        if not 0 <= tok < spec.vocab_size:
            raise ContractError(f"token id {tok} outside vocab of size {spec.vocab_size}")


def penalized_scores(
    scores: np.ndarray, history_mask: np.ndarray, penalty: float
) -> np.ndarray:
    """Apply a repetition penalty to ``scores`` in place-free fashion.

    For every token marked in ``history_mask``, a positive score is divided
    by ``penalty`` and a negative score multiplied by it; zeros are left
    alone.  ``penalty = 1`` is the identity.
    """
    if penalty == 1.0:
        return scores
    adjusted = scores.astype(np.float64, copy=True)
    pos = history_mask & (adjusted > 0)
    neg = history_mask & (adjusted < 0)
    adjusted[pos] /= penalty
    adjusted[neg] *= penalty
    return adjusted


def greedy_pick(row: np.ndarray, history: Iterable[int], penalty: float = 1.0) -> int:
    """Pick the argmax token from a score row under a repetition penalty.

    Ties break to the lowest token id so that decoding is platform
    independent.

    Args:
        row: 1-D array of ``vocab_size`` finite scores.
        history: Token ids already visible to this position; each id present
            gets penalized once regardless of multiplicity.
        penalty: Repetition penalty, ``>= 1``.
    """
    scores = np.asarray(row, dtype=np.float64)
    if scores.ndim != 1:
        raise ContractError("score row must be 1-D")
    if not np.all(np.isfinite(scores)):
        raise ContractError("score row contains non-finite values")
    if penalty < 1.0:
        raise ContractError("penalty must be >= 1")
    if penalty != 1.0:
        mask = np.zeros(scores.shape[0], dtype=bool)
        for tok in history:
            if 0 <= tok < scores.shape[0]:
                mask[tok] = True
        scores = penalized_scores(scores, mask, penalty)
    return int(np.argmax(scores))


@dataclass
class HistoryMask:
    """Incrementally maintained history membership mask for greedy picking.

    Avoids rebuilding a set per decoded position; the decode loops add one
    token at a time as the visible context grows.
    """

    vocab_size: int
    mask: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.mask = np.zeros(self.vocab_size, dtype=bool)

    def extend(self, tokens: Iterable[int]) -> None:
        for tok in tokens:
            self.mask[tok] = True

    def add(self, token: int) -> None:
        self.mask[token] = True

    def copy(self) -> "HistoryMask":
        out = HistoryMask(self.vocab_size)
        out.mask[:] = self.mask
        return out

    def pick(self, row: np.ndarray, penalty: float) -> int:
        scores = np.asarray(row, dtype=np.float64)
        if penalty != 1.0:
            scores = penalized_scores(scores, self.mask, penalty)
        return int(np.argmax(scores))
