"""Independent reference implementations the tests check the engine against.

Nothing here imports engine internals beyond the backend forward surface;
each oracle re-derives its answer from first principles (plain greedy loop,
re-simulated lookahead trace, closed-form combinatorics, JSONL replay).
"""

from __future__ import annotations

import json
from math import comb

import numpy as np


def penalized_argmax(row, history, penalty: float) -> int:
    """Reference greedy pick: divide positive / multiply negative, lowest-id ties."""
    scores = np.asarray(row, dtype=np.float64).copy()
    for tok in set(history):
        if 0 <= tok < scores.shape[0]:
            if scores[tok] > 0:
                scores[tok] /= penalty
            elif scores[tok] < 0:
                scores[tok] *= penalty
    return int(np.argmax(scores))


def greedy_ar_reference(backend, prompt, max_new: int, penalty: float = 1.2) -> list[int]:
    """Brute-force greedy decode: one uncached full-context forward per token."""
    seq = list(prompt)
    out: list[int] = []
    for _ in range(max_new):
        step = backend.forward(seq, 1)
        tok = penalized_argmax(step.rows[0], seq, penalty)
        out.append(tok)
        seq.append(tok)
        if tok == backend.spec.eos_id:
            break
    return out


def jacobi_reference(
    backend,
    prompt,
    window_len: int,
    skip: bool,
    max_new: int,
    penalty: float = 1.2,
) -> tuple[list[int], list[int]]:
    """Re-simulated lookahead trace with plain uncached forwards.

    Returns (exact stream, per-iteration commit sizes).
    """
    pad, eos = backend.spec.pad_id, backend.spec.eos_id
    c = window_len
    exact: list[int] = []
    window = [pad] * c
    commits: list[int] = []
    while True:
        ctx = list(prompt) + exact + window
        step = backend.forward(ctx, c + 1)
        split = len(ctx) - (c + 1)
        preds = [
            penalized_argmax(step.rows[j], ctx[: split + j + 1], penalty)
            for j in range(c + 1)
        ]
        k = 0
        while k < c and window[k] == preds[k]:
            k += 1
        m = 1 + k if skip else 1
        committed = preds[:m]
        tail = preds[m : c + 1]
        remaining = max_new - len(exact)
        cut = min(len(committed), remaining)
        head = committed[:cut]
        if eos in head:
            cut = head.index(eos) + 1
        dropped = committed[cut:]
        committed = committed[:cut]
        window = (dropped + tail + [pad] * c)[:c]
        exact.extend(committed)
        commits.append(len(committed))
        if eos in committed or len(exact) >= max_new:
            return exact, commits


def hypergeometric_survival(length: int, kept: int, keys: int) -> float:
    """P(all ``keys`` marked positions kept) when ``kept`` of ``length`` survive."""
    if kept < keys:
        return 0.0
    return comb(length - keys, kept - keys) / comb(length, kept)


def replay_hit_report(trace_lines: list[str], reference: list[int]) -> dict:
    """Recompute first/total-hit and both occurrence counts from raw JSONL."""
    header = json.loads(trace_lines[0])
    assert header["type"] == "header"
    prompt_len = len(header["prompt"])
    fh = th = o_gr = o_rg = windows = positions = 0
    for line in trace_lines[1:]:
        obj = json.loads(line)
        if obj.get("type") != "iteration":
            continue
        guesses = obj["window_before"]
        if not guesses:
            continue
        start = obj["frontier_before"] - prompt_len
        if start < 0 or start + len(guesses) > len(reference):
            continue
        ref = reference[start : start + len(guesses)]
        windows += 1
        positions += len(guesses)
        fh += int(guesses[0] == ref[0])
        th += sum(1 for a, b in zip(guesses, ref) if a == b)
        ref_set, guess_set = set(ref), set(guesses)
        o_gr += sum(1 for t in guesses if t in ref_set)
        o_rg += sum(1 for t in ref if t in guess_set)
    return {
        "first_hit": fh,
        "total_hit": th,
        "occur_guess_in_ref": o_gr,
        "occur_ref_in_guess": o_rg,
        "windows_evaluated": windows,
        "positions_evaluated": positions,
    }
