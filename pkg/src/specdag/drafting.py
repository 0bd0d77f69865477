"""Draft-stage construction: chain, tree, and graph drafting with pruning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DraftConfig
from .distributions import Distribution, argmax_token, sample_token
from .graph import ROOT_ID, Hypothesis, NodeStatus, TokenGraph, flatten, trailing_ngram
from .models import LanguageModel


@dataclass(frozen=True)
class ForwardEvent:
    """One model forward: role, tokens processed, tokens visible before it."""

    role: str  # "draft" or "verify"
    l_new: int
    l_ctx: int


@dataclass
class DraftStageResult:
    graph: TokenGraph
    dists: dict[int, Distribution]  # node id -> draft distribution after that node
    forwards: list[ForwardEvent] = field(default_factory=list)
    hypothesis: Hypothesis | None = None


def select_children(
    dist: Distribution, k: int, theta_prob: float, theta_sib: float
) -> list[tuple[int, float, NodeStatus]]:
    """Top-k candidate children with their pruning status.

    A child is a probability-pruned leaf when its mass is strictly below
    theta_prob, a sibling-pruned leaf when strictly below theta_sib times
    the best sibling's mass; equality keeps it expandable. Zero-mass tokens
    are never drafted.
    """
    probs = dist.probs
    order = np.argsort(-probs, kind="stable")[:k]
    selected = [int(t) for t in order if probs[t] > 0]
    if not selected:
        return []
    m_q = float(probs[selected[0]])
    out = []
    for t in selected:
        q = float(probs[t])
        if q < theta_prob:
            status = NodeStatus.LEAF_PRUNED_PROB
        elif q < theta_sib * m_q:
            status = NodeStatus.LEAF_PRUNED_SIBLING
        else:
            status = NodeStatus.EXPANDABLE
        out.append((t, q, status))
    return out


def _draft_chain(
    model: LanguageModel,
    context: list[int],
    config: DraftConfig,
    rng: np.random.Generator,
) -> tuple[list[int], list[float], list[Distribution]]:
    """Greedy or sampled chain of up to gamma_max tokens with draft-exit.

    Returns (tokens, q_probs, dists) where dists[i] generated tokens[i];
    a trailing extra distribution is present when draft-exit fired (the
    rejected step was still a forward).
    """
    ctx = list(context)
    tokens: list[int] = []
    q_probs: list[float] = []
    dists: list[Distribution] = []
    for _ in range(config.gamma_max):
        dist = model.eval_next(ctx)
        dists.append(dist)
        if config.deterministic:
            token = argmax_token(dist)
        else:
            token = sample_token(dist, config.top_p, config.temperature, rng)
        q = dist[token]
        if q < config.theta_prob:
            break  # draft-exit: the sub-threshold token is not appended
        tokens.append(token)
        q_probs.append(q)
        ctx.append(token)
    return tokens, q_probs, dists


def draft_ssd(
    model: LanguageModel,
    context: list[int],
    config: DraftConfig,
    rng: np.random.Generator | None = None,
) -> Hypothesis:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    tokens, q_probs, _ = _draft_chain(model, context, config, rng)
    return Hypothesis(tokens=tokens, q_probs=q_probs)


def detect_and_merge(graph: TokenGraph, node_id: int, tau: int) -> bool:
    """Mark a redundant node as merged, or register its trailing tau-gram.

    Only nodes that could still expand participate: a merge exists to stop
    expansion and reuse the target's continuation, so targets must have a
    computed continuation. A match pointing at the node's own ancestor is
    skipped (it would close a cycle) and leaves the index untouched.
    Returns True when the node was merged.
    """
    node = graph.node(node_id)
    if node.status is not NodeStatus.EXPANDABLE:
        return False
    gram = trailing_ngram(graph, node_id, tau)
    if gram is None:
        return False
    target = graph.ngram_index.get(gram)
    if target is not None and target != node_id and not graph.is_ancestor(target, node_id):
        node.status = NodeStatus.LEAF_MERGED
        node.merge_target = target
        node.logits_source = target
        return True
    if target is None:
        graph.ngram_index[gram] = node_id
    return False


def _attach_children(
    graph: TokenGraph,
    parent_id: int,
    dist: Distribution,
    config: DraftConfig,
    merge: bool,
) -> list[int]:
    """Attach selected children of one frontier node; returns new expandable ids."""
    new_frontier = []
    parent_depth = graph.node(parent_id).depth
    for token, q, status in select_children(dist, config.k, config.theta_prob, config.theta_sib):
        if status is NodeStatus.EXPANDABLE and parent_depth + 1 >= config.gamma_max:
            status = NodeStatus.LEAF_DEPTH
        child = graph.add_child(parent_id, token, q, status)
        if merge:
            detect_and_merge(graph, child.id, config.tau)
        if child.status is NodeStatus.EXPANDABLE:
            new_frontier.append(child.id)
    return new_frontier


def expand_frontier(
    model: LanguageModel,
    graph: TokenGraph,
    frontier: list[int],
    context: list[int],
    config: DraftConfig,
    dists: dict[int, Distribution],
) -> tuple[list[int], ForwardEvent]:
    """One masked-batch forward over the expandable frontier.

    The batch covers the already-expanded interior plus the frontier (an
    ancestor-closed set); memoized interior positions are not re-evaluated,
    so the forward processes exactly the frontier tokens.
    """
    batch_ids = [
        nid for nid in graph.non_root_ids()
        if graph.node(nid).status is NodeStatus.EXPANDABLE or graph.node(nid).children
    ]
    batch = flatten(graph, batch_ids)
    already = len(dists) - 1  # tree nodes evaluated before this round (root aside)
    event = ForwardEvent("draft", len(frontier), len(context) + already)
    results = model.eval_masked_batch(context, batch, memo=dists)
    by_id = dict(zip(batch.positions, results))
    new_frontier: list[int] = []
    for nid in frontier:
        new_frontier.extend(
            _attach_children(graph, nid, by_id[nid], config, merge=config.mode == "gsd")
        )
    return new_frontier, event


def run_draft_stage(
    draft_model: LanguageModel,
    context: list[int],
    config: DraftConfig,
    rng: np.random.Generator | None = None,
) -> DraftStageResult:
    """Build one stage's chain (ssd), tree (tsd), or graph (gsd)."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if config.mode == "ssd":
        return _run_chain_stage(draft_model, context, config, rng)
    if config.mode not in ("tsd", "gsd"):
        raise ValueError(f"draft stage undefined for mode {config.mode!r}")

    graph = TokenGraph(config.k, config.gamma_max, config.tau)
    dists: dict[int, Distribution] = {}
    forwards: list[ForwardEvent] = []

    root_dist = draft_model.eval_next(context)
    dists[ROOT_ID] = root_dist
    forwards.append(ForwardEvent("draft", 1, len(context)))
    frontier = _attach_children(graph, ROOT_ID, root_dist, config, merge=config.mode == "gsd")

    rounds = 1
    while frontier:
        rounds += 1
        assert rounds <= config.gamma_max, "frontier survived past the depth limit"
        frontier, event = expand_frontier(draft_model, graph, frontier, context, config, dists)
        forwards.append(event)
    return DraftStageResult(graph=graph, dists=dists, forwards=forwards)


def _run_chain_stage(
    model: LanguageModel,
    context: list[int],
    config: DraftConfig,
    rng: np.random.Generator,
) -> DraftStageResult:
    tokens, q_probs, dists_list = _draft_chain(model, context, config, rng)
    graph = TokenGraph(1, config.gamma_max, config.tau)
    dists: dict[int, Distribution] = {}
    forwards = [
        ForwardEvent("draft", 1, len(context) + i) for i in range(len(dists_list))
    ]
    parent = ROOT_ID
    for i, (token, q) in enumerate(zip(tokens, q_probs)):
        depth = i + 1
        if depth >= config.gamma_max:
            status = NodeStatus.LEAF_DEPTH
        elif i == len(tokens) - 1:
            # Chain ended by draft-exit: the continuation was below theta_prob.
            status = NodeStatus.LEAF_PRUNED_PROB
        else:
            status = NodeStatus.EXPANDABLE
        dists[parent] = dists_list[i]
        parent = graph.add_child(parent, token, q, status).id
    if len(dists_list) > len(tokens):
        # Draft-exit evaluated one more step than it kept.
        dists[parent] = dists_list[len(tokens)]
    return DraftStageResult(
        graph=graph,
        dists=dists,
        forwards=forwards,
        hypothesis=Hypothesis(tokens=tokens, q_probs=q_probs),
    )
