"""Preallocated key/value cache with batch padding plans.

The cache buffer is sized once, before decoding starts, and never grows:
per layer it holds ``[batch, max_len, heads, head_dim]`` key and value
arrays plus a per-instance valid length.  Only positions belonging to
committed (exact) tokens are ever written back; lookahead-window state is
recomputed every iteration because those tokens may still change.

Two padding plans support batches whose instances progress unevenly:

* cache padding — pad the key/value length dimension to the longest valid
  length in the batch and mask the unused slots per instance;
* input padding — right-pad uneven input-id blocks with PAD under a mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from glimpse.backends.base import BackendSpec
from glimpse.errors import CapacityError, ConfigError, ContractError


@dataclass
class PadPlan:
    """How a ragged per-instance quantity maps onto one rectangular tensor.

    Attributes:
        target_len: Padded length (the batch maximum).
        pad_counts: Per-instance number of padded slots.
        mask: ``[batch, target_len]`` bool; True marks real (unpadded) slots.
    """

    target_len: int
    pad_counts: list[int]
    mask: np.ndarray

    @property
    def is_noop(self) -> bool:
        return all(c == 0 for c in self.pad_counts)


def plan_kv_padding(valid_lens: Sequence[int]) -> PadPlan:
    """Plan cache-length padding to the largest valid length in the batch."""
    if len(valid_lens) == 0:
        raise ContractError("batch must be nonempty")
    if any(v < 0 for v in valid_lens):
        raise ContractError("valid lengths must be nonnegative")
    target = max(valid_lens)
    mask = np.zeros((len(valid_lens), target), dtype=bool)
    for i, v in enumerate(valid_lens):
        mask[i, :v] = True
    return PadPlan(
        target_len=target,
        pad_counts=[target - v for v in valid_lens],
        mask=mask,
    )


def plan_input_padding(
    blocks: Sequence[Sequence[int]], pad_id: int
) -> tuple[PadPlan, np.ndarray]:
    """Right-pad uneven input-id blocks to the batch maximum.

    Returns the plan and the padded ``[batch, target_len]`` int array.
    Padded slots carry ``pad_id`` and are excluded by the mask, so an
    unpadded instance's outputs are unaffected by its neighbors.
    """
    if len(blocks) == 0:
        raise ContractError("batch must be nonempty")
    lengths = [len(b) for b in blocks]
    if any(n == 0 for n in lengths):
        raise ContractError("input blocks must be nonempty")
    target = max(lengths)
    padded = np.full((len(blocks), target), pad_id, dtype=np.int64)
    mask = np.zeros((len(blocks), target), dtype=bool)
    for i, block in enumerate(blocks):
        padded[i, : lengths[i]] = np.asarray(block, dtype=np.int64)
        mask[i, : lengths[i]] = True
    return (
        PadPlan(target_len=target, pad_counts=[target - n for n in lengths], mask=mask),
        padded,
    )


class CacheBuffer:
    """Fixed-capacity per-layer K/V storage for a batch of decode sessions.

    Storage is zero-initialized at construction and mutated strictly in
    place afterwards; ``alloc_events`` counts storage allocations so tests
    can assert the no-reallocation contract.
    """

    def __init__(self, batch: int, max_len: int, spec: BackendSpec) -> None:
        if batch <= 0 or max_len <= 0:
            raise ConfigError("batch and max_len must be positive")
        if not spec.supports_cache:
            raise ConfigError("backend spec does not support caching")
        self.batch = batch
        self.max_len = max_len
        self.spec = spec
        shape = (batch, max_len, spec.n_heads, spec.head_dim)
        self.keys = [np.zeros(shape) for _ in range(spec.n_layers)]
        self.values = [np.zeros(shape) for _ in range(spec.n_layers)]
        self.tokens = np.zeros((batch, max_len), dtype=np.int64)
        self.valid_len = np.zeros(batch, dtype=np.int64)
        self.alloc_events = 1

    def slot(self, instance: int) -> "CacheSlot":
        if not 0 <= instance < self.batch:
            raise ContractError(f"instance {instance} outside batch of {self.batch}")
        return CacheSlot(self, instance)

    def write_back(
        self,
        instance: int,
        new_kv: Sequence[tuple[np.ndarray, np.ndarray]],
        start: int,
        count: int,
        tokens: Sequence[int],
    ) -> None:
        """Persist K/V (and token ids) for ``count`` positions from ``start``.

        ``start`` must equal the instance's current valid length: committed
        positions are contiguous, with no overlap and no gap.
        """
        if count == 0:
            return
        if count < 0:
            raise ContractError("write_back count must be nonnegative")
        if start != int(self.valid_len[instance]):
            raise ContractError(
                f"write_back at {start} but valid length is {int(self.valid_len[instance])}"
            )
        if start + count > self.max_len:
            raise CapacityError(
                f"cache capacity {self.max_len} exceeded at position {start + count}"
            )
        if len(new_kv) != self.spec.n_layers:
            raise ContractError("write_back expects one (k, v) pair per layer")
        if len(tokens) != count:
            raise ContractError("write_back token count mismatch")
        for li, (k, v) in enumerate(new_kv):
            if k.shape[0] < count or v.shape[0] < count:
                raise ContractError("write_back K/V shorter than count")
            self.keys[li][instance, start : start + count] = k[:count]
            self.values[li][instance, start : start + count] = v[:count]
        self.tokens[instance, start : start + count] = np.asarray(tokens, dtype=np.int64)
        self.valid_len[instance] = start + count

    def valid_lens(self) -> list[int]:
        return [int(v) for v in self.valid_len]

    def debug_state(self) -> dict:
        """Valid lengths and current padding mask, for trace diffing."""
        plan = plan_kv_padding(self.valid_lens())
        return {
            "valid_len": self.valid_lens(),
            "mask": plan.mask.astype(int).tolist(),
        }


@dataclass
class CacheSlot:
    """One instance's view of a cache buffer; owned by a single session."""

    buffer: CacheBuffer
    instance: int

    @property
    def valid_len(self) -> int:
        return int(self.buffer.valid_len[self.instance])

    @property
    def tokens(self) -> np.ndarray:
        return self.buffer.tokens[self.instance, : self.valid_len]

    def layer_kv(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """Views of the cached keys/values for one layer (no copy)."""
        v = self.valid_len
        return (
            self.buffer.keys[layer][self.instance, :v],
            self.buffer.values[layer][self.instance, :v],
        )

    def write_back(
        self,
        new_kv: Sequence[tuple[np.ndarray, np.ndarray]],
        start: int,
        count: int,
        tokens: Sequence[int],
    ) -> None:
        self.buffer.write_back(self.instance, new_kv, start, count, tokens)


def alloc(batch: int, max_len: int, spec: BackendSpec) -> CacheBuffer:
    """Allocate the whole cache up front; see :class:`CacheBuffer`."""
    return CacheBuffer(batch, max_len, spec)
