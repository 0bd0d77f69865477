"""Command-line harness: train models, run decode sessions, compare, analyze.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

from .analysis import (
    aggregate_overlap,
    child_position_acceptance,
    compute_metrics,
    merge_kl_study,
    modeled_cost,
    modeled_speedup,
    timing_breakdown,
)
from .config import MODES, DraftConfig
from .errors import ModelMismatchError, SpecDagError
from .graph import TokenGraph
from .models import ForwardCost, LanguageModel, load_ngram, save_ngram, train_ngram
from .session import decode_session, session_rng
from .trace import TraceWriter, atomic_write_text, read_graphs, read_trace
from .vocab import build_vocabulary, byte_tokenize, whitespace_tokenize

OUT_DIR_ENV = "SPECDAG_OUT_DIR"
DEFAULT_TARGET_COST = ForwardCost(1.0, 0.01, 1e-5)
DEFAULT_DRAFT_COST = DEFAULT_TARGET_COST.scaled(0.1)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _tokenizer(byte_level: bool):
    return byte_tokenize if byte_level else whitespace_tokenize


def _read_documents(path: Path, byte_level: bool) -> list[list[str]]:
    tok = _tokenizer(byte_level)
    docs = [tok(line) for line in path.read_text(encoding="utf-8").splitlines()]
    return [d for d in docs if d]


def _read_prompts(path: Path) -> list[str]:
    text = path.read_text(encoding="utf-8")
    prompts = []
    if path.suffix == ".jsonl":
        for i, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "prompt" not in obj:
                raise SpecDagError(f"{path}:{i + 1}: missing 'prompt' field")
            prompts.append(obj["prompt"])
    else:
        prompts = [line for line in text.splitlines() if line.strip()]
    if not prompts:
        raise SpecDagError(f"{path}: no prompts found")
    return prompts


def _parse_cost_params(spec: str | None) -> dict[str, ForwardCost]:
    """Parse "draft=f:l:q,target=f:l:q" (either role optional)."""
    costs = {"draft": DEFAULT_DRAFT_COST, "target": DEFAULT_TARGET_COST}
    if not spec:
        return costs
    for part in spec.split(","):
        role, _, values = part.partition("=")
        role = role.strip()
        if role not in costs or not values:
            raise SpecDagError(f"bad --cost-params entry {part!r}")
        nums = values.split(":")
        if len(nums) != 3:
            raise SpecDagError(f"cost for {role} needs fixed:per_token:attention")
        costs[role] = ForwardCost(*(float(v) for v in nums))
    return costs


def _load_config_file(path: str | None) -> dict:
    """Plain key=value file; keys match the CLI flag names."""
    if not path:
        return {}
    values = {}
    for i, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecDagError(f"{path}:{i + 1}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, headers: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(headers)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    corpus = Path(args.corpus)
    if not corpus.exists():
        raise SpecDagError(f"corpus file not found: {corpus}")
    docs = _read_documents(corpus, args.byte_level)
    if not docs:
        raise SpecDagError(f"{corpus}: corpus is empty")
    vocab = build_vocabulary(docs)
    if args.append_eos:
        docs = [d + [vocab.tokens[vocab.eos_id]] for d in docs]
    documents = [vocab.encode(d) for d in docs]
    model = train_ngram(documents, vocab, args.order, args.smoothing)
    save_ngram(model, args.out)
    counts = model.ngram_entry_counts()
    print(f"vocabulary: {vocab.size} tokens")
    for m, n in enumerate(counts):
        print(f"contexts of length {m}: {n}")
    print(f"model written to {args.out}")
    return 0


def cmd_query(args) -> int:
    model = load_ngram(args.model)
    tok = _tokenizer(args.byte_level)
    context = model.vocab.encode(tok(args.context)) if args.context else []
    dist = model.eval_next(context)
    order = sorted(range(len(dist)), key=lambda t: (-dist[t], t))[: args.top]
    for t in order:
        if dist[t] <= 0:
            break
        print(f"{model.vocab.tokens[t]}\t{dist[t]:.6f}")
    return 0


def _resolve_run_config(args) -> DraftConfig:
    return DraftConfig(
        mode=args.mode,
        k=args.k,
        gamma_max=args.gamma,
        theta_prob=args.theta_prob,
        theta_sib=args.theta_sib,
        tau=args.tau,
        verification="stochastic" if args.stochastic else "deterministic",
        top_p=args.top_p,
        temperature=args.temperature,
        seed=args.seed,
    )


def cmd_run(args) -> int:
    config = _resolve_run_config(args)
    costs = _parse_cost_params(args.cost_params)
    target = load_ngram(args.target_model, cost=costs["target"])
    draft: LanguageModel | None = None
    if config.mode != "vanilla":
        if not args.draft_model:
            raise SpecDagError(f"mode {config.mode} requires --draft-model")
        draft = load_ngram(args.draft_model, cost=costs["draft"])
        if draft.vocab.tokens != target.vocab.tokens:
            raise ModelMismatchError("draft and target models use different vocabularies")

    prompts_path = Path(args.prompts)
    if not prompts_path.exists():
        raise SpecDagError(f"prompts file not found: {prompts_path}")
    prompt_texts = _read_prompts(prompts_path)
    tok = _tokenizer(args.byte_level)
    prompts = []
    for i, text in enumerate(prompt_texts):
        ids = target.vocab.encode(tok(text))[: args.max_input]
        if not ids:
            raise SpecDagError(f"prompt {i} is empty after tokenization")
        prompts.append(ids)

    out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV, "runs/latest"))
    header = {
        "mode": config.mode,
        "config": config.to_dict(),
        "max_output": args.max_output,
        "max_input": args.max_input,
        "prompt_sha256": _sha256_file(prompts_path),
        "n_prompts": len(prompts),
        "draft_model": args.draft_model,
        "target_model": args.target_model,
        "byte_level": args.byte_level,
        "costs": {
            role: [c.fixed, c.per_token, c.attention] for role, c in costs.items()
        },
    }
    writer = TraceWriter(out_dir, header)
    output_lines = []
    for i, prompt in enumerate(prompts):
        rng = session_rng(config.seed, i)
        result = decode_session(draft, target, prompt, config, args.max_output, rng)
        writer.add_session(i, result)
        output_lines.append(" ".join(str(t) for t in result.output))
    writer.close()
    atomic_write_text(out_dir / "outputs.txt", "\n".join(output_lines) + "\n")

    metrics = compute_metrics(out_dir / "trace.jsonl", out_dir / "timings.jsonl")
    summary = metrics.to_dict()
    summary["prompt_sha256"] = header["prompt_sha256"]
    summary["costs"] = header["costs"]
    summary["modeled_cost"] = modeled_cost(metrics, costs["draft"], costs["target"])
    summary["modeled_speedup"] = modeled_speedup(metrics, costs["draft"], costs["target"])
    atomic_write_text(out_dir / "metrics.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(
        f"{config.mode}: {metrics.sessions} sessions, {metrics.total_output_tokens} tokens, "
        f"acceptance {metrics.acceptance_rate:.3f}, graph success {metrics.graph_success:.3f}, "
        f"modeled speedup {summary['modeled_speedup']:.2f}x -> {out_dir}"
    )
    return 0


def _load_summary(run_dir: Path) -> dict:
    path = run_dir / "metrics.json"
    if not path.exists():
        raise SpecDagError(f"no metrics.json in {run_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def cmd_compare(args) -> int:
    summaries = [_load_summary(Path(d)) for d in args.runs]
    if len(summaries) < 2:
        raise SpecDagError("compare needs at least two completed runs")
    shas = {s.get("prompt_sha256") for s in summaries}
    if len(shas) != 1:
        raise SpecDagError("runs were made on different prompt sets")
    headers = [
        "mode", "acceptance_rate", "drafted_tokens", "graph_success",
        "modeled_speedup", "wall_clock_s",
    ]
    rows = []
    for s in summaries:
        no_graph = s["mode"] in ("vanilla", "ssd")
        rows.append([
            s["mode"],
            f"{s['acceptance_rate']:.3f}",
            s["drafted_token_total"],
            "-" if no_graph else f"{100.0 * s['graph_success']:.1f}%",
            f"{s['modeled_speedup']:.2f}",
            f"{s['wall_total_s']:.3f}",
        ])
    out = Path(args.out or (Path(args.runs[0]) / "compare.csv"))
    _write_csv(out, headers, rows)
    widths = [max(len(str(r[i])) for r in [headers] + rows) for i in range(len(headers))]
    for row in [headers] + rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    print(f"comparison written to {out}")
    return 0


def _trees_from_run(run_dir: Path) -> list[TokenGraph]:
    header, _ = read_trace(run_dir / "trace.jsonl")
    cfg = header["config"]
    trees = []
    for _, _, lines in read_graphs(run_dir / "graphs.txt"):
        if not lines:
            continue
        trees.append(TokenGraph.from_lines(lines, cfg["k"], cfg["gamma_max"], cfg["tau"]))
    return trees


def cmd_analyze(args) -> int:
    run_dir = Path(args.run)
    out = Path(args.out or run_dir / f"study_{args.study.replace('-', '_')}.csv")
    if args.study == "overlap":
        trees = _trees_from_run(run_dir)
        if any(t.has_merge_edges() for t in trees):
            raise SpecDagError("overlap study needs tree runs (ssd/tsd); this run has merges")
        stats = aggregate_overlap(trees, args.n_max)
        _write_csv(out, ["n", "fraction"], [[n, f] for n, f in stats.as_rows()])
    elif args.study == "kl":
        header, _ = read_trace(run_dir / "trace.jsonl")
        model_path = args.draft_model or header.get("draft_model")
        if not model_path:
            raise SpecDagError("kl study needs --draft-model (run has none recorded)")
        model = load_ngram(model_path)
        prompts_path = Path(args.prompts) if args.prompts else None
        if prompts_path is None:
            raise SpecDagError("kl study needs --prompts")
        tok = _tokenizer(header.get("byte_level", False))
        prompts = [
            model.vocab.encode(tok(t))[: header.get("max_input", 512)]
            for t in _read_prompts(prompts_path)
        ]
        taus = [int(v) for v in args.tau_values.split(",")]
        ks = [int(v) for v in args.k_values.split(",")]
        rows = merge_kl_study(model, prompts, taus, ks)
        _write_csv(
            out,
            ["k", "tau", "events", "mean_kl"],
            [
                [r["k"], r["tau"], r["events"],
                 "no-merge-events" if r["mean_kl"] is None else f"{r['mean_kl']:.6e}"]
                for r in rows
            ],
        )
    elif args.study == "child-rank":
        fractions = child_position_acceptance(run_dir / "trace.jsonl")
        _write_csv(out, ["position", "fraction"], [[k, f"{v:.6f}"] for k, v in fractions.items()])
    elif args.study == "timing":
        rows = []
        for d in [args.run, *args.extra_runs]:
            d = Path(d)
            header, _ = read_trace(d / "trace.jsonl")
            t = timing_breakdown(d / "trace.jsonl", d / "timings.jsonl")
            rows.append([
                header.get("mode"), t["stages"], f"{t['draft_s']:.6f}",
                f"{t['verify_s']:.6f}", f"{t['others_s']:.6f}", f"{t['total_s']:.6f}",
            ])
        _write_csv(out, ["mode", "stages", "draft_s", "verify_s", "others_s", "total_s"], rows)
    print(f"{args.study} study written to {out}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="specdag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[], help="train an n-gram model")
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--order", type=int, default=2)
    p_train.add_argument("--smoothing", type=float, default=1.0,
                         help="interpolation weight toward the observed counts")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--byte-level", action="store_true")
    p_train.add_argument("--append-eos", action="store_true",
                         help="terminate every training document with the eos token")

    p_query = sub.add_parser("query", help="print a model's next-token distribution")
    p_query.add_argument("--model", required=True)
    p_query.add_argument("--context", default="")
    p_query.add_argument("--top", type=int, default=10)
    p_query.add_argument("--byte-level", action="store_true")

    p_run = sub.add_parser("run", help="decode a prompt set")
    p_run.add_argument("--config", help="key=value config file; flags override it")
    p_run.add_argument("--mode", choices=MODES, default="gsd")
    p_run.add_argument("--draft-model")
    p_run.add_argument("--target-model", required=True)
    p_run.add_argument("--prompts", required=True)
    p_run.add_argument("--out-dir", help=f"default from ${OUT_DIR_ENV}")
    p_run.add_argument("--k", type=int, default=4)
    p_run.add_argument("--gamma", type=int, default=10)
    p_run.add_argument("--theta-prob", type=float, default=0.2)
    p_run.add_argument("--theta-sib", type=float, default=0.3)
    p_run.add_argument("--tau", type=int, default=2)
    p_run.add_argument("--top-p", type=float, default=0.7)
    p_run.add_argument("--temperature", type=float, default=0.7)
    p_run.add_argument("--seed", type=int, default=0)
    group = p_run.add_mutually_exclusive_group()
    group.add_argument("--deterministic", dest="stochastic", action="store_false")
    group.add_argument("--stochastic", dest="stochastic", action="store_true")
    p_run.set_defaults(stochastic=False)
    p_run.add_argument("--max-output", type=int, default=512)
    p_run.add_argument("--max-input", type=int, default=512)
    p_run.add_argument("--cost-params", help="draft=f:l:q,target=f:l:q")
    p_run.add_argument("--byte-level", action="store_true")

    p_cmp = sub.add_parser("compare", help="tabulate completed runs side by side")
    p_cmp.add_argument("runs", nargs="+")
    p_cmp.add_argument("--out")

    p_an = sub.add_parser("analyze", help="run a study over traces")
    p_an.add_argument("--study", choices=["overlap", "kl", "child-rank", "timing"], required=True)
    p_an.add_argument("--run", required=True)
    p_an.add_argument("extra_runs", nargs="*", help="additional runs (timing study)")
    p_an.add_argument("--out")
    p_an.add_argument("--n-max", type=int, default=5)
    p_an.add_argument("--draft-model")
    p_an.add_argument("--prompts")
    p_an.add_argument("--tau-values", default="1,2,3,4")
    p_an.add_argument("--k-values", default="3,5")
    return parser


_COMMANDS = {
    "train": cmd_train,
    "query": cmd_query,
    "run": cmd_run,
    "compare": cmd_compare,
    "analyze": cmd_analyze,
}

_INT_KEYS = {"k", "gamma", "tau", "seed", "max_output", "max_input", "order", "top", "n_max"}
_FLOAT_KEYS = {"theta_prob", "theta_sib", "top_p", "temperature", "smoothing"}
_BOOL_KEYS = {"stochastic", "byte_level", "append_eos"}


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    """Config-file values fill in everything the command line left at default."""
    if not getattr(args, "config", None):
        return
    values = _load_config_file(args.config)
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, raw in values.items():
        if not hasattr(args, key):
            raise SpecDagError(f"config file sets unknown option {key!r}")
        if key in explicit:
            continue
        if key in _INT_KEYS:
            value: object = int(raw)
        elif key in _FLOAT_KEYS:
            value = float(raw)
        elif key in _BOOL_KEYS:
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            value = raw
        setattr(args, key, value)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config_file(args, argv)
        return _COMMANDS[args.command](args)
    except SpecDagError as exc:
        print(f"specdag: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"specdag: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"specdag: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
