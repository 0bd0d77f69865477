"""Measurement and study code over traces, graphs, and live draft stages."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import DraftConfig
from .distributions import kl_divergence
from .drafting import run_draft_stage
from .errors import TraceFormatError
from .graph import ROOT_ID, NodeStatus, TokenGraph
from .models import ForwardCost, LanguageModel
from .trace import iter_sessions, iter_stages, read_trace


@dataclass
class RunMetrics:
    """Aggregated results of one run.

    Identities: total_output_tokens = accepted_from_draft + stages (every
    stage contributes exactly one bonus token); acceptance_rate and
    graph_success lie in [0, 1].
    """

    mode: str
    sessions: int = 0
    stages: int = 0
    total_output_tokens: int = 0
    accepted_from_draft: int = 0
    drafted_token_total: int = 0
    stages_with_merged_accept: int = 0
    draft_forwards: int = 0
    draft_lin: int = 0           # sum of tokens processed by draft forwards
    draft_attn: int = 0          # sum of l_new * l_ctx over draft forwards
    verify_forwards: int = 0
    verify_lin: int = 0
    verify_attn: int = 0
    baseline_lin: int = 0        # target-only decode of the same output: tokens
    baseline_attn: int = 0       # and its attention term
    wall_draft_s: float = 0.0
    wall_verify_s: float = 0.0
    wall_others_s: float = 0.0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted_from_draft / self.total_output_tokens if self.total_output_tokens else 0.0

    @property
    def graph_success(self) -> float:
        return self.stages_with_merged_accept / self.stages if self.stages else 0.0

    @property
    def wall_total_s(self) -> float:
        return self.wall_draft_s + self.wall_verify_s + self.wall_others_s

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "sessions": self.sessions,
            "stages": self.stages,
            "total_output_tokens": self.total_output_tokens,
            "accepted_from_draft": self.accepted_from_draft,
            "drafted_token_total": self.drafted_token_total,
            "stages_with_merged_accept": self.stages_with_merged_accept,
            "acceptance_rate": self.acceptance_rate,
            "graph_success": self.graph_success,
            "draft_forwards": self.draft_forwards,
            "draft_lin": self.draft_lin,
            "draft_attn": self.draft_attn,
            "verify_forwards": self.verify_forwards,
            "verify_lin": self.verify_lin,
            "verify_attn": self.verify_attn,
            "baseline_lin": self.baseline_lin,
            "baseline_attn": self.baseline_attn,
            "wall_draft_s": self.wall_draft_s,
            "wall_verify_s": self.wall_verify_s,
            "wall_others_s": self.wall_others_s,
            "wall_total_s": self.wall_total_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunMetrics":
        fields = {
            k: d[k] for k in (
                "mode", "sessions", "stages", "total_output_tokens",
                "accepted_from_draft", "drafted_token_total",
                "stages_with_merged_accept", "draft_forwards", "draft_lin",
                "draft_attn", "verify_forwards", "verify_lin", "verify_attn",
                "baseline_lin", "baseline_attn", "wall_draft_s",
                "wall_verify_s", "wall_others_s",
            )
        }
        return cls(**fields)


def compute_metrics(trace_path: str | Path, timings_path: str | Path | None = None) -> RunMetrics:
    """Aggregate a trace (and optional timing sidecar) into RunMetrics."""
    header, records = read_trace(trace_path)
    metrics = RunMetrics(mode=header.get("mode", "unknown"))
    for start, stages, end in iter_sessions(records):
        metrics.sessions += 1
        prompt_len = start["prompt_len"]
        out_len = end["output_len"]
        metrics.total_output_tokens += out_len
        # Target-only decode of the same output: one single-token forward per
        # token, each seeing the context committed so far.
        metrics.baseline_lin += out_len
        metrics.baseline_attn += sum(prompt_len + j for j in range(out_len))
        for stage in stages:
            metrics.stages += 1
            metrics.accepted_from_draft += stage["accepted"]
            metrics.drafted_token_total += stage["drafted"]
            if stage["merged_accept"]:
                metrics.stages_with_merged_accept += 1
            if stage["committed"] != stage["accepted"] + 1:
                raise TraceFormatError("stage committed tokens != accepted + 1")
            for role, l_new, l_ctx in stage["forwards"]:
                if role == "draft":
                    metrics.draft_forwards += 1
                    metrics.draft_lin += l_new
                    metrics.draft_attn += l_new * l_ctx
                else:
                    metrics.verify_forwards += 1
                    metrics.verify_lin += l_new
                    metrics.verify_attn += l_new * l_ctx
    if metrics.total_output_tokens != metrics.accepted_from_draft + metrics.stages:
        raise TraceFormatError("output tokens != accepted + stages; trace inconsistent")
    if timings_path is not None and Path(timings_path).exists():
        for line in Path(timings_path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            rec = json.loads(line)
            metrics.wall_draft_s += rec.get("draft_s", 0.0)
            metrics.wall_verify_s += rec.get("verify_s", 0.0)
            metrics.wall_others_s += rec.get("others_s", 0.0)
    return metrics


def modeled_cost(metrics: RunMetrics, draft: ForwardCost, target: ForwardCost) -> dict[str, float]:
    """Abstract cost per phase for the run described by ``metrics``."""
    return {
        "draft": draft.fixed * metrics.draft_forwards
        + draft.per_token * metrics.draft_lin
        + draft.attention * metrics.draft_attn,
        "verify": target.fixed * metrics.verify_forwards
        + target.per_token * metrics.verify_lin
        + target.attention * metrics.verify_attn,
    }


def modeled_speedup(metrics: RunMetrics, draft: ForwardCost, target: ForwardCost) -> float:
    """Cost of target-only decoding of the same output over the run's cost."""
    baseline = (
        target.fixed * metrics.baseline_lin
        + target.per_token * metrics.baseline_lin
        + target.attention * metrics.baseline_attn
    )
    run = modeled_cost(metrics, draft, target)
    total = run["draft"] + run["verify"]
    return baseline / total if total > 0 else float("inf")


@dataclass
class OverlapStats:
    """Per n: fraction of tree tokens inside a re-occurring segment of length >= n.

    A segment re-occurs when an identical token path of that length appears
    somewhere no single root-to-leaf branch contains both copies. Using
    "length at least n" makes the fractions non-increasing in n by
    construction; single-branch trees score zero everywhere.
    """

    fractions: dict[int, float] = field(default_factory=dict)

    def as_rows(self) -> list[tuple[int, float]]:
        return sorted(self.fractions.items())


def ngram_overlap(tree: TokenGraph, n_max: int) -> OverlapStats:
    if tree.has_merge_edges():
        raise ValueError("overlap statistics are defined on trees (run before merging)")
    node_ids = tree.non_root_ids()
    if not node_ids:
        return OverlapStats({n: 0.0 for n in range(1, n_max + 1)})
    ancestors: dict[int, set[int]] = {}
    for nid in node_ids:
        parent = tree.node(nid).parent
        base = ancestors.get(parent, set()) if parent != ROOT_ID else set()
        ancestors[nid] = base | {parent} if parent != ROOT_ID else set()

    def on_common_branch(w1: tuple[int, ...], w2: tuple[int, ...]) -> bool:
        union = set(w1) | set(w2)
        deepest = max(union, key=lambda nid: tree.node(nid).depth)
        chain = ancestors[deepest] | {deepest}
        return union <= chain

    marked: set[int] = set()
    stats = OverlapStats()
    for n in range(n_max, 0, -1):
        groups: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
        for nid in node_ids:
            node = tree.node(nid)
            if node.depth < n:
                continue
            ids = []
            cur = nid
            for _ in range(n):
                ids.append(cur)
                cur = tree.node(cur).parent
            window = tuple(reversed(ids))
            seq = tuple(tree.node(i).token for i in window)
            groups.setdefault(seq, []).append(window)
        for windows in groups.values():
            if len(windows) < 2:
                continue
            for i, w1 in enumerate(windows):
                if any(
                    not on_common_branch(w1, w2)
                    for j, w2 in enumerate(windows) if i != j
                ):
                    marked.update(w1)
        stats.fractions[n] = len(marked) / len(node_ids)
    return stats


def aggregate_overlap(trees: list[TokenGraph], n_max: int) -> OverlapStats:
    """Token-weighted overlap fractions across many trees."""
    total = 0
    covered = {n: 0.0 for n in range(1, n_max + 1)}
    for tree in trees:
        size = len(tree)
        if size == 0:
            continue
        total += size
        stats = ngram_overlap(tree, n_max)
        for n, frac in stats.fractions.items():
            covered[n] += frac * size
    if total == 0:
        return OverlapStats({n: 0.0 for n in range(1, n_max + 1)})
    return OverlapStats({n: covered[n] / total for n in covered})


def merge_kl_study(
    draft_model: LanguageModel,
    prompts: list[list[int]],
    tau_values: list[int],
    k_values: list[int],
    base_config: DraftConfig | None = None,
) -> list[dict]:
    """Divergence between a merged node's true continuation and its shared one.

    For each (k, tau) runs one graph draft stage per prompt; at every merged
    node compares the distribution the draft model would produce for the
    node's actual path against the distribution inherited from the merge
    target. Rows with no merge events report mean_kl as None.
    """
    base = base_config or DraftConfig(mode="gsd")
    rows = []
    for k in k_values:
        for tau in tau_values:
            config = base.with_(mode="gsd", k=k, tau=tau)
            kls: list[float] = []
            for prompt in prompts:
                stage = run_draft_stage(draft_model, list(prompt), config)
                graph = stage.graph
                for nid in graph.non_root_ids():
                    node = graph.node(nid)
                    if node.status is not NodeStatus.LEAF_MERGED:
                        continue
                    actual = draft_model.eval_next(list(prompt) + graph.path_tokens(nid))
                    inherited = stage.dists[node.merge_target]
                    kls.append(kl_divergence(actual, inherited))
            rows.append({
                "k": k,
                "tau": tau,
                "events": len(kls),
                "mean_kl": float(np.mean(kls)) if kls else None,
            })
    return rows


def child_position_acceptance(trace_path: str | Path) -> dict[str, float]:
    """Share of verification steps accepting the rank-r child (or rejecting).

    Each step at a node with children either accepts some child (counted
    under its 1-based sibling rank) or rejects them all; the fractions and
    the rejection share partition the steps.
    """
    _, records = read_trace(trace_path)
    rank_counts: dict[int, int] = {}
    rejected = 0
    for stage in iter_stages(records):
        for rank in stage["accept_ranks"]:
            rank_counts[rank] = rank_counts.get(rank, 0) + 1
        if stage["rejected_step"]:
            rejected += 1
    total = sum(rank_counts.values()) + rejected
    if total == 0:
        return {"rejected": 0.0}
    out = {f"rank_{r}": c / total for r, c in sorted(rank_counts.items())}
    out["rejected"] = rejected / total
    return out


def timing_breakdown(trace_path: str | Path, timings_path: str | Path) -> dict[str, float]:
    """Mean per-stage wall-clock per phase, plus the share consistency check."""
    metrics = compute_metrics(trace_path, timings_path)
    stages = max(metrics.stages, 1)
    return {
        "stages": metrics.stages,
        "draft_s": metrics.wall_draft_s / stages,
        "verify_s": metrics.wall_verify_s / stages,
        "others_s": metrics.wall_others_s / stages,
        "total_s": metrics.wall_total_s / stages,
    }
