"""Seed-deterministic toy transformer with KV-cache and batched masking.

A small pre-LN causal transformer whose weights are drawn from a documented
pseudo-random scheme: every tensor comes from a single
``numpy.random.default_rng(seed)`` stream in a fixed order (token embedding,
position embedding, then per layer wq/wk/wv/wo/w1/w2, then the output head),
each entry i.i.d. normal with std ``1/sqrt(fan_in)`` (0.5 for embeddings).
Two constructions from the same seed are therefore identical, and forward
passes are pure functions of ``(context, block_len, cache contents)``.

All math runs in float64 so that batched, cached, and from-scratch paths
agree to well below argmax-flipping noise.

The batched path consumes the two padding plans from :mod:`glimpse.cache`:
cache-length padding masks out unused key slots per instance, and input
padding right-pads uneven input blocks with PAD under a mask, so every
batched instance reproduces its solo output.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from glimpse.backends.base import (
    BackendSpec,
    StepOutput,
    TokenSeq,
    check_forward_args,
)
from glimpse.cache import CacheSlot, plan_input_padding, plan_kv_padding
from glimpse.errors import CacheMismatchError, CapacityError, ContractError

_NEG = -1e30  # masked attention score; exp() underflows to exactly 0.0


def default_toy_spec(
    vocab_size: int = 256,
    n_layers: int = 2,
    n_heads: int = 4,
    model_dim: int = 64,
    max_len: int = 512,
) -> BackendSpec:
    """Byte-level default shape: PAD and EOS take the two top ids."""
    return BackendSpec(
        vocab_size=vocab_size,
        pad_id=vocab_size - 2,
        eos_id=vocab_size - 1,
        supports_cache=True,
        supports_attention=True,
        n_layers=n_layers,
        n_heads=n_heads,
        model_dim=model_dim,
        max_len=max_len,
    )


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + 1e-5)


class ToyTransformer:
    """Deterministic desk-scale causal transformer backend."""

    def __init__(self, seed: int, spec: BackendSpec | None = None) -> None:
        if spec is None:
            spec = default_toy_spec()
        if not spec.supports_cache or not spec.supports_attention:
            raise ContractError("toy transformer spec must support cache and attention")
        if spec.n_layers < 1 or spec.n_heads < 1 or spec.max_len < 1:
            raise ContractError("toy transformer needs layers, heads and max_len")
        self.spec = spec
        self.seed = seed
        d, v = spec.model_dim, spec.vocab_size
        rng = np.random.default_rng(seed)

        def draw(*shape: int, std: float) -> np.ndarray:
            return rng.normal(0.0, std, size=shape)

        proj = 1.0 / np.sqrt(d)
        self.wte = draw(v, d, std=0.5)
        self.wpe = draw(spec.max_len, d, std=0.5)
        self.layers = []
        for _ in range(spec.n_layers):
            self.layers.append(
                {
                    "wq": draw(d, d, std=proj),
                    "wk": draw(d, d, std=proj),
                    "wv": draw(d, d, std=proj),
                    "wo": draw(d, d, std=proj),
                    "w1": draw(d, 4 * d, std=proj),
                    "w2": draw(4 * d, d, std=1.0 / np.sqrt(4 * d)),
                }
            )
        self.lm_head = draw(d, v, std=proj)
        # Debug statistic: attention score reads (query x key pairs summed
        # over layers).  Advisory only; outputs never depend on it.
        self.score_reads = 0

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def forward(
        self, context: TokenSeq, block_len: int, cache: CacheSlot | None = None
    ) -> StepOutput:
        return self.forward_batch([context], [block_len], [cache])[0]

    def forward_batch(
        self,
        contexts: Sequence[TokenSeq],
        block_lens: Sequence[int],
        slots: Sequence[CacheSlot | None] | None = None,
    ) -> list[StepOutput]:
        if slots is None:
            slots = [None] * len(contexts)
        if not len(contexts) == len(block_lens) == len(slots):
            raise ContractError("forward_batch arguments must have equal lengths")
        if len(contexts) == 0:
            return []

        spec = self.spec
        valid_lens: list[int] = []
        blocks: list[list[int]] = []
        for ctx, bl, slot in zip(contexts, block_lens, slots):
            check_forward_args(spec, ctx, bl)
            if len(ctx) > spec.max_len:
                raise CapacityError(
                    f"context length {len(ctx)} exceeds max_len {spec.max_len}"
                )
            v = 0
            if slot is not None:
                v = slot.valid_len
                if v > len(ctx) - bl:
                    raise CacheMismatchError(
                        f"cache holds {v} positions but only "
                        f"{len(ctx) - bl} may precede the queried block"
                    )
                if list(slot.tokens) != list(ctx[:v]):
                    raise CacheMismatchError("cached tokens disagree with context prefix")
            valid_lens.append(v)
            blocks.append(list(ctx[v:]))

        kv_plan = plan_kv_padding(valid_lens)
        in_plan, padded = plan_input_padding(blocks, spec.pad_id)
        batch, n_max = padded.shape
        v_max = kv_plan.target_len
        n_lens = np.asarray([len(b) for b in blocks])
        d, heads, hd = spec.model_dim, spec.n_heads, spec.head_dim

        # Absolute positions of each input slot (clipped for masked pads).
        positions = np.minimum(
            np.asarray(valid_lens)[:, None] + np.arange(n_max)[None, :],
            spec.max_len - 1,
        )
        x = self.wte[padded] + self.wpe[positions]

        # Key visibility: cached slot k valid iff k < valid_len[b]; new slot t
        # visible to query j iff t <= j (causal) and t is a real input.
        key_mask = np.zeros((batch, n_max, v_max + n_max), dtype=bool)
        if v_max:
            key_mask[:, :, :v_max] = kv_plan.mask[:, None, :]
        causal = np.tril(np.ones((n_max, n_max), dtype=bool))
        key_mask[:, :, v_max:] = causal[None, :, :] & in_plan.mask[:, None, :]

        for b in range(batch):
            self.score_reads += int(n_lens[b]) * (valid_lens[b] + int(n_lens[b])) * len(
                self.layers
            )

        cached_k, cached_v = self._gather_cached(slots, valid_lens, v_max)
        new_kv: list[tuple[np.ndarray, np.ndarray]] = []
        attn_last: np.ndarray | None = None
        for layer in self.layers:
            h = _layer_norm(x)
            q = (h @ layer["wq"]).reshape(batch, n_max, heads, hd)
            k = (h @ layer["wk"]).reshape(batch, n_max, heads, hd)
            v = (h @ layer["wv"]).reshape(batch, n_max, heads, hd)
            new_kv.append((k, v))
            if v_max:
                k_all = np.concatenate([cached_k.pop(0), k], axis=1)
                v_all = np.concatenate([cached_v.pop(0), v], axis=1)
            else:
                k_all, v_all = k, v
            scores = np.einsum("bqhd,bkhd->bhqk", q, k_all) / np.sqrt(hd)
            scores = np.where(key_mask[:, None, :, :], scores, _NEG)
            scores -= scores.max(axis=-1, keepdims=True)
            weights = np.exp(scores)
            weights /= weights.sum(axis=-1, keepdims=True)
            attn_last = weights
            attn = np.einsum("bhqk,bkhd->bqhd", weights, v_all)
            x = x + attn.reshape(batch, n_max, d) @ layer["wo"]
            h2 = _layer_norm(x)
            x = x + np.maximum(h2 @ layer["w1"], 0.0) @ layer["w2"]

        logits = _layer_norm(x) @ self.lm_head
        head_avg = attn_last.mean(axis=1)  # [batch, n_max, v_max + n_max]

        outputs: list[StepOutput] = []
        for b, (bl, v_len) in enumerate(zip(block_lens, valid_lens)):
            n_b = int(n_lens[b])
            rows = logits[b, n_b - bl : n_b].copy()
            # Summary columns: this instance's real cache slots then its real
            # input slots, i.e. one column per visible context position.
            cols = np.concatenate(
                [np.arange(v_len), v_max + np.arange(n_b)]
            ).astype(np.intp)
            summary = head_avg[b, n_b - bl : n_b][:, cols].copy()
            kv_b = [
                (k[b, :n_b].copy(), v[b, :n_b].copy()) for (k, v) in new_kv
            ]
            outputs.append(
                StepOutput(
                    rows=rows,
                    attention_summary=summary,
                    new_kv=kv_b,
                    new_start=v_len,
                )
            )
        return outputs

    def _gather_cached(
        self,
        slots: Sequence[CacheSlot | None],
        valid_lens: Sequence[int],
        v_max: int,
    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Copy each instance's cached K/V into [batch, v_max, ...] workspaces."""
        if v_max == 0:
            return [], []
        batch = len(slots)
        heads, hd = self.spec.n_heads, self.spec.head_dim
        ks, vs = [], []
        for _ in range(self.spec.n_layers):
            ks.append(np.zeros((batch, v_max, heads, hd)))
            vs.append(np.zeros((batch, v_max, heads, hd)))
        for b, (slot, v_len) in enumerate(zip(slots, valid_lens)):
            if slot is None or v_len == 0:
                continue
            for li in range(self.spec.n_layers):
                k_cached, v_cached = slot.layer_kv(li)
                ks[li][b, :v_len] = k_cached
                vs[li][b, :v_len] = v_cached
        return ks, vs


def make_toy_transformer(seed: int, spec: BackendSpec | None = None) -> ToyTransformer:
    return ToyTransformer(seed, spec)
