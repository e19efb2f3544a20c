"""Command-line entry point: decode, bench, sweep-window, corrupt.

Every command reads an optional JSON config (overridable by flags), builds
a deterministic backend, and writes machine-readable outputs (JSON report,
JSONL traces, CSV tables).  Each output embeds the run manifest so results
are replayable; reruns with the same manifest produce identical token
outputs (wall-clock fields excepted).

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
Set GLIMPSE_LOG=DEBUG|INFO|WARNING for log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

from glimpse import __version__
from glimpse.backends import (
    Backend,
    RetrievalScript,
    default_toy_spec,
    make_counting_backend,
    make_ngram_backend,
    make_scripted_backend,
    make_toy_transformer,
)
from glimpse.corruption import (
    CorruptionSpec,
    make_scripted_tasks,
    run_overlap_experiment,
)
from glimpse.engine import (
    DecodeConfig,
    DecodeResult,
    ar_baseline,
    decode_with_answer,
    truncated_cot,
)
from glimpse.errors import ConfigError
from glimpse.metrics import iteration_savings

log = logging.getLogger("glimpse")


@dataclass
class RunManifest:
    """Identity of one CLI run, embedded in every output file."""

    command: str
    config: dict
    config_digest: str
    backend: dict
    version: str
    outputs: list[str]

    def as_dict(self) -> dict:
        return asdict(self)


def _manifest(command: str, cfg: DecodeConfig, backend_desc: dict, outputs: list[str]) -> RunManifest:
    payload = cfg.digest_payload()
    return RunManifest(
        command=command,
        config=cfg.to_dict(),
        config_digest=hashlib.sha256(payload.encode()).hexdigest(),
        backend=backend_desc,
        version=__version__,
        # basenames only: identical runs into different directories stay
        # byte-identical
        outputs=[Path(p).name for p in outputs],
    )


def _parse_tokens(text: str) -> list[int]:
    parts = text.replace(",", " ").split()
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad token list {text!r}") from exc


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def _build_config(args: argparse.Namespace, file_cfg: dict) -> DecodeConfig:
    data = dict(file_cfg.get("decode", {}))
    if getattr(args, "window", None) is not None:
        data["window_len"] = args.window
    if getattr(args, "skip", None) is not None:
        data["skip"] = args.skip
    if getattr(args, "max_iters", None) is not None:
        data["iteration_cap"] = args.max_iters
    if getattr(args, "probe_threshold", None) is not None:
        data["probe_threshold"] = args.probe_threshold
    if getattr(args, "max_new_tokens", None) is not None:
        data["max_new_tokens"] = args.max_new_tokens
    if getattr(args, "answer_trigger", None) is not None:
        data["answer_trigger"] = _parse_tokens(args.answer_trigger)
    data.setdefault("window_len", 0)
    return DecodeConfig.from_dict(data)


def _build_backend(args: argparse.Namespace, file_cfg: dict) -> tuple[Backend, dict]:
    section = dict(file_cfg.get("backend", {}))
    kind = getattr(args, "backend", None) or section.get("kind")
    if kind is None:
        raise ConfigError("no backend selected (use --backend or config)")
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = section.get("seed", 0)
    if kind == "toy":
        spec_kwargs = {
            k: section[k]
            for k in ("vocab_size", "n_layers", "n_heads", "model_dim", "max_len")
            if k in section
        }
        backend: Backend = make_toy_transformer(seed, default_toy_spec(**spec_kwargs))
        desc = {"kind": "toy", "seed": seed, **spec_kwargs}
    elif kind == "ngram":
        table = getattr(args, "table", None) or section.get("table")
        if table is None:
            raise ConfigError("ngram backend needs --table")
        order = getattr(args, "order", None) or section.get("order", 2)
        backend = make_ngram_backend(order, table)
        desc = {"kind": "ngram", "table": str(table), "order": order}
    elif kind == "scripted":
        script = RetrievalScript(
            num_keys=getattr(args, "keys", None) or section.get("num_keys", 1),
            rationale_len=getattr(args, "rationale_len", None)
            or section.get("rationale_len", 24),
        )
        backend = make_scripted_backend(script)
        desc = {
            "kind": "scripted",
            "num_keys": script.num_keys,
            "rationale_len": script.rationale_len,
        }
    elif kind == "counting":
        modulus = getattr(args, "modulus", None) or section.get("modulus", 10)
        backend = make_counting_backend(modulus)
        desc = {"kind": "counting", "modulus": modulus}
    else:
        raise ConfigError(f"unknown backend {kind!r}")
    return backend, desc


def _prompts_from_args(args: argparse.Namespace) -> list[list[int]]:
    prompts: list[list[int]] = []
    if getattr(args, "prompt", None):
        prompts.extend(_parse_tokens(p) for p in args.prompt)
    if getattr(args, "prompts_file", None):
        data = _load_json(args.prompts_file)
        if isinstance(data, dict):
            data = data.get("prompts", [])
        prompts.extend([list(map(int, p)) for p in data])
    if not prompts:
        raise ConfigError("no prompts given (use --prompt or --prompts-file)")
    return prompts


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(getattr(args, "out", None) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, manifest: RunManifest, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        fh.write(f"# manifest: {json.dumps(manifest.as_dict(), sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _result_payload(result: DecodeResult) -> dict:
    return {
        "exact_rationale": result.exact_rationale,
        "approximate_tail": result.approximate_tail,
        "answer": result.answer,
        "stop": {"reason": result.stop.reason, "value": result.stop.value},
        "iterations": result.trace.iterations,
        "exact_tokens": len(result.exact_rationale),
    }


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------


def cmd_decode(args: argparse.Namespace) -> int:
    file_cfg = _load_json(args.config) if args.config else {}
    cfg = _build_config(args, file_cfg)
    backend, desc = _build_backend(args, file_cfg)
    prompts = _prompts_from_args(args)
    out = _out_dir(args)
    result_path = out / "result.json"
    trace_path = out / "trace.jsonl"
    tokens_path = out / "tokens.txt"
    manifest = _manifest(
        "decode", cfg, desc, [str(result_path), str(trace_path), str(tokens_path)]
    )

    method = args.method
    payloads = []
    token_lines = []
    with trace_path.open("w") as tf:
        for prompt in prompts:
            if method == "ar":
                result = ar_baseline(prompt, backend, cfg)
            else:
                result = decode_with_answer(prompt, backend, cfg)
            payloads.append({"prompt": prompt, "method": method, **_result_payload(result)})
            token_lines.append(" ".join(str(t) for t in result.exact_rationale))
            result.trace.write_jsonl(tf)
    result_path.write_text(
        json.dumps(
            {"manifest": manifest.as_dict(), "results": payloads},
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    # Exact-token file: the method flag is deliberately not part of the
    # manifest, so equivalent runs (c=0 vs the AR baseline) compare equal
    # byte for byte.
    tokens_path.write_text(
        f"# manifest: {json.dumps(manifest.as_dict(), sort_keys=True)}\n"
        + "\n".join(token_lines)
        + "\n"
    )
    log.info("wrote %s, %s and %s", result_path, trace_path, tokens_path)
    print(f"decode: {len(prompts)} prompt(s) -> {result_path}")
    return 0


_BENCH_METHODS = ("ar", "truncated", "parallel_noskip", "parallel_skip")


def _run_method(
    method: str,
    prompt: list[int],
    backend: Backend,
    cfg: DecodeConfig,
    noskip_iterations: int,
) -> DecodeResult:
    if method == "ar":
        return ar_baseline(prompt, backend, cfg)
    if method == "truncated":
        return truncated_cot(prompt, backend, cfg, noskip_iterations)
    if method == "parallel_noskip":
        return decode_with_answer(prompt, backend, replace(cfg, skip=False))
    if method == "parallel_skip":
        return decode_with_answer(prompt, backend, replace(cfg, skip=True))
    raise ConfigError(f"unknown method {method!r}")


def cmd_bench(args: argparse.Namespace) -> int:
    file_cfg = _load_json(args.config) if args.config else {}
    cfg = _build_config(args, file_cfg)
    backend, desc = _build_backend(args, file_cfg)
    prompts = _prompts_from_args(args)
    methods = list(args.methods.split(",")) if args.methods else list(_BENCH_METHODS)
    for m in methods:
        if m not in _BENCH_METHODS:
            raise ConfigError(f"unknown method {m!r} (choose from {_BENCH_METHODS})")
    out = _out_dir(args)
    report_path = out / "bench_report.json"
    csv_path = out / "bench.csv"
    manifest = _manifest("bench", cfg, desc, [str(report_path), str(csv_path)])

    rows = []
    report: list[dict] = []
    for pid, prompt in enumerate(prompts):
        noskip = decode_with_answer(prompt, backend, replace(cfg, skip=False))
        ar = ar_baseline(prompt, backend, cfg)
        base_wall = ar.trace.wall_s
        per_method: dict[str, DecodeResult] = {}
        for method in methods:
            if method == "parallel_noskip":
                per_method[method] = noskip
            elif method == "ar":
                per_method[method] = ar
            else:
                per_method[method] = _run_method(
                    method, prompt, backend, cfg, noskip.trace.iterations
                )
        for method in methods:
            res = per_method[method]
            bd = res.trace.breakdown
            wall = res.trace.wall_s
            speedup = base_wall / wall if wall > 0 else 0.0
            rows.append(
                [
                    method,
                    pid,
                    res.trace.iterations,
                    len(res.exact_rationale),
                    f"{wall:.6f}",
                    f"{bd.infer:.6f}",
                    f"{bd.decode:.6f}",
                    f"{bd.context_decode:.6f}",
                    f"{bd.kv_cache:.6f}",
                    f"{speedup:.4f}",
                ]
            )
            entry = {
                "method": method,
                "prompt_id": pid,
                "iterations": res.trace.iterations,
                "exact_tokens": len(res.exact_rationale),
                "wall_s": wall,
                "breakdown": bd.as_dict(),
                "stop_check_s": res.trace.stop_check_s,
                "speedup_vs_ar": speedup,
            }
            if method in ("parallel_noskip", "parallel_skip"):
                entry["savings"] = iteration_savings(res.trace, ar.trace).as_dict()
            report.append(entry)
    _write_csv(
        csv_path,
        manifest,
        [
            "method",
            "prompt_id",
            "iterations",
            "exact_tokens",
            "wall_s",
            "infer_s",
            "decode_s",
            "context_decode_s",
            "kv_cache_s",
            "speedup_vs_ar",
        ],
        rows,
    )
    report_path.write_text(
        json.dumps(
            {"manifest": manifest.as_dict(), "rows": report}, sort_keys=True, indent=2
        )
        + "\n"
    )
    print(f"bench: {len(prompts)} prompt(s) x {len(methods)} methods -> {csv_path}")
    return 0


def cmd_sweep_window(args: argparse.Namespace) -> int:
    file_cfg = _load_json(args.config) if args.config else {}
    cfg = _build_config(args, file_cfg)
    backend, desc = _build_backend(args, file_cfg)
    prompts = _prompts_from_args(args)
    windows = sorted({int(w) for w in _parse_tokens(args.windows)})
    if len(windows) == 0:
        raise ConfigError("no window sizes given")
    out = _out_dir(args)
    csv_path = out / "sweep.csv"
    json_path = out / "sweep.json"
    manifest = _manifest("sweep-window", cfg, desc, [str(csv_path), str(json_path)])

    from glimpse.metrics import aggregate, score_window, snapshots_from_trace

    rows = []
    payload = []
    for c in windows:
        ccfg = replace(cfg, window_len=c)
        per_iter: dict[int, list] = {}
        calls: dict[int, list[float]] = {}
        for prompt in prompts:
            res = decode_with_answer(prompt, backend, ccfg)
            ar = ar_baseline(
                prompt,
                backend,
                replace(cfg, max_new_tokens=len(res.exact_rationale) + c + 1),
            )
            snaps = snapshots_from_trace(res.trace, ar.exact_rationale)
            for snap in snaps:
                per_iter.setdefault(snap.iteration, []).append(score_window(snap))
            mean_call = (
                res.trace.wall_s / res.trace.iterations if res.trace.iterations else 0.0
            )
            for rec in res.trace.records:
                calls.setdefault(rec.iteration, []).append(mean_call)
        for iteration in sorted(calls):
            recs = per_iter.get(iteration, [])
            if recs:
                rep = aggregate(recs).as_dict()
            else:
                rep = {
                    "first_hit": 0,
                    "first_hit_ratio": 0.0,
                    "total_hit": 0,
                    "total_hit_ratio": 0.0,
                    "occur_guess_in_ref": 0,
                    "occur_guess_in_ref_ratio": 0.0,
                    "occur_ref_in_guess": 0,
                    "occur_ref_in_guess_ratio": 0.0,
                    "windows_evaluated": 0,
                    "positions_evaluated": 0,
                }
            mean_call_s = sum(calls[iteration]) / len(calls[iteration])
            rows.append(
                [
                    c,
                    iteration,
                    rep["windows_evaluated"],
                    rep["first_hit"],
                    f"{rep['first_hit_ratio']:.4f}",
                    rep["total_hit"],
                    f"{rep['total_hit_ratio']:.4f}",
                    rep["occur_guess_in_ref"],
                    rep["occur_ref_in_guess"],
                    f"{mean_call_s:.6f}",
                ]
            )
            payload.append({"window_len": c, "iteration": iteration, **rep,
                            "mean_call_s": mean_call_s})
    _write_csv(
        csv_path,
        manifest,
        [
            "window_len",
            "iteration",
            "windows",
            "first_hit",
            "first_hit_ratio",
            "total_hit",
            "total_hit_ratio",
            "occur_guess_in_ref",
            "occur_ref_in_guess",
            "mean_call_s",
        ],
        rows,
    )
    json_path.write_text(
        json.dumps(
            {"manifest": manifest.as_dict(), "rows": payload}, sort_keys=True, indent=2
        )
        + "\n"
    )
    print(f"sweep-window: {len(windows)} window size(s) -> {csv_path}")
    return 0


def cmd_corrupt(args: argparse.Namespace) -> int:
    file_cfg = _load_json(args.config) if args.config else {}
    script = RetrievalScript(
        num_keys=args.keys, rationale_len=args.rationale_len
    )
    cases, backend = make_scripted_tasks(args.tasks, args.seed or 0, script)
    ratios = [float(r) for r in args.ratios.replace(",", " ").split()]
    spec = CorruptionSpec(
        ratios=sorted(ratios),
        seeds=list(range(args.n_seeds)),
        pad_id=backend.spec.pad_id,
    )
    cfg = _build_config(args, file_cfg) if args.config else None
    rows = run_overlap_experiment(cases, spec, backend, cfg)
    out = _out_dir(args)
    csv_path = out / "corruption.csv"
    desc = {
        "kind": "scripted",
        "num_keys": script.num_keys,
        "rationale_len": script.rationale_len,
        "tasks": args.tasks,
        "task_seed": args.seed or 0,
    }
    from glimpse.corruption import default_answer_config

    manifest = _manifest("corrupt", cfg or default_answer_config(), desc, [str(csv_path)])
    _write_csv(
        csv_path,
        manifest,
        ["ratio", "mean", "stddev", "n"],
        [[f"{r.ratio:.4f}", f"{r.mean:.6f}", f"{r.stddev:.6f}", r.n_seeds] for r in rows],
    )
    print(f"corrupt: {len(rows)} ratio row(s) -> {csv_path}")
    return 0


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument(
        "--backend", choices=["toy", "ngram", "scripted", "counting"], default=None
    )
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--window", type=int, default=None, help="lookahead window size")
    skip = p.add_mutually_exclusive_group()
    skip.add_argument("--skip", dest="skip", action="store_true", default=None)
    skip.add_argument("--no-skip", dest="skip", action="store_false")
    p.add_argument("--max-iters", type=int, default=None, help="iteration cap")
    p.add_argument("--probe-threshold", type=float, default=None)
    p.add_argument("--max-new-tokens", type=int, default=None)
    p.add_argument("--answer-trigger", default=None, help="token list, e.g. '4,5'")
    p.add_argument("--table", help="ngram table file")
    p.add_argument("--order", type=int, default=None, help="ngram order")
    p.add_argument("--keys", type=int, default=1, help="scripted key tokens")
    p.add_argument("--rationale-len", type=int, default=24)
    p.add_argument("--modulus", type=int, default=None, help="counting modulus")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glimpse",
        description="Parallel decoding engine with verified exact commits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="run one decode per prompt")
    _add_common(p)
    p.add_argument("--prompt", action="append", help="inline token list")
    p.add_argument("--prompts-file", help="JSON list of prompts")
    p.add_argument(
        "--method", choices=["parallel", "ar"], default="parallel"
    )
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bench", help="compare decode methods per prompt")
    _add_common(p)
    p.add_argument("--prompt", action="append")
    p.add_argument("--prompts-file")
    p.add_argument("--methods", help="comma list of methods", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-window", help="hit metrics per window size")
    _add_common(p)
    p.add_argument("--prompt", action="append")
    p.add_argument("--prompts-file")
    p.add_argument("--windows", required=True, help="window sizes, e.g. '0,2,4,8'")
    p.set_defaults(func=cmd_sweep_window)

    p = sub.add_parser("corrupt", help="accuracy vs kept-token ratio")
    _add_common(p)
    p.add_argument("--tasks", type=int, default=8)
    p.add_argument("--n-seeds", type=int, default=40)
    p.add_argument(
        "--ratios", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
    )
    p.set_defaults(func=cmd_corrupt)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("GLIMPSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
