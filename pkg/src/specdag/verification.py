"""Target-model verification of drafted trees, deterministic and stochastic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    Distribution,
    accept_prob,
    argmax_token,
    residual_distribution,
    transform,
)
from .drafting import ForwardEvent
from .graph import ROOT_ID, NodeStatus, TokenGraph, flatten
from .models import KVCacheState, LanguageModel


@dataclass
class VerificationResult:
    accepted_path: list[int]         # node ids from the root downward
    accepted_tokens: list[int]
    bonus_token: int
    accept_ranks: list[int]          # 1-based sibling rank of each accepted child
    rejected_step: bool              # walk stopped at a node whose children all failed
    merged_token_accepted: bool      # some accepted token carried shared logits
    labels: dict[int, str] = field(default_factory=dict)  # node id -> accepted/rejected
    forward: ForwardEvent | None = None

    @property
    def accepted(self) -> int:
        return len(self.accepted_tokens)


def _target_distributions(
    target_model: LanguageModel, context: list[int], tree: TokenGraph
) -> tuple[dict[int, Distribution], ForwardEvent]:
    """Target distribution at the root and after every tree node, one forward.

    The forward processes the committed tail plus every tree token; the
    visible length is the committed context plus the tree.
    """
    if tree.has_merge_edges():
        raise ValueError("verification requires an unmerged tree")
    batch = flatten(tree)
    dists = {ROOT_ID: target_model.eval_next(context)}
    results = target_model.eval_masked_batch(context, batch, memo=None)
    dists.update(zip(batch.positions, results))
    event = ForwardEvent("verify", len(tree) + 1, len(context) + len(tree))
    return dists, event


def verify_deterministic(
    target_model: LanguageModel,
    context: list[int],
    tree: TokenGraph,
    *,
    eos_token: int | None = None,
    max_accepted: int | None = None,
) -> VerificationResult:
    """Accept the unique root path whose every token is the target's argmax.

    The bonus token is the target argmax at the stopping prefix, so each
    stage commits at least one token and the committed sequence is exactly
    what target-only greedy decoding would produce. When the argmax is the
    end-of-sequence token it is always emitted as the bonus, never accepted
    from the draft.
    """
    dists, event = _target_distributions(target_model, context, tree)
    labels: dict[int, str] = {}
    path: list[int] = []
    tokens: list[int] = []
    ranks: list[int] = []
    merged = False
    rejected_step = False
    cur = ROOT_ID
    while True:
        top = argmax_token(dists[cur])
        children = tree.node(cur).children
        budget_hit = max_accepted is not None and len(tokens) >= max_accepted
        match = None
        if not budget_hit:
            for rank, cid in enumerate(children, start=1):
                if tree.node(cid).token == top:
                    match = (rank, cid)
                    break
        if match is None or top == eos_token:
            if match is None and children and not budget_hit:
                rejected_step = True
                for cid in children:
                    labels.setdefault(cid, "rejected")
            bonus = top
            break
        rank, cid = match
        child = tree.node(cid)
        labels[cid] = "accepted"
        path.append(cid)
        tokens.append(child.token)
        ranks.append(rank)
        merged = merged or child.shared_logits
        cur = cid
    return VerificationResult(
        accepted_path=path,
        accepted_tokens=tokens,
        bonus_token=bonus,
        accept_ranks=ranks,
        rejected_step=rejected_step,
        merged_token_accepted=merged,
        labels=labels,
        forward=event,
    )


def _draw(dist: Distribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a full distribution (no further truncation)."""
    u = rng.random()
    cum = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, len(dist) - 1)


def verify_stochastic(
    target_model: LanguageModel,
    context: list[int],
    tree: TokenGraph,
    rng: np.random.Generator,
    draft_dists: dict[int, Distribution],
    *,
    top_p: float = 1.0,
    temperature: float = 1.0,
    eos_token: int | None = None,
    max_accepted: int | None = None,
) -> VerificationResult:
    """Sampling verification: accept child c with probability min(1, p(c)/q(c)).

    Both p and q are viewed through the configured temperature and top-p
    transform, matching the proposal distribution the draft actually sampled
    from. Children are tried in descending draft probability; each rejection
    folds the proposal out of p (norm(max(0, p - q))) before the next trial,
    and the bonus token is drawn from the final residual. On a single-child
    chain this is exactly classic speculative sampling, which preserves the
    target distribution. Children outside the transformed proposal's support
    are skipped without a residual update (their proposal mass is zero).
    """
    dists, event = _target_distributions(target_model, context, tree)
    labels: dict[int, str] = {}
    path: list[int] = []
    tokens: list[int] = []
    ranks: list[int] = []
    merged = False
    rejected_step = False
    cur = ROOT_ID
    p_cur = transform(dists[cur], top_p, temperature)
    while True:
        children = tree.node(cur).children
        budget_hit = max_accepted is not None and len(tokens) >= max_accepted
        if not children or budget_hit:
            bonus = _draw(p_cur, rng)
            break
        source = tree.node(cur).logits_source
        q_full = draft_dists.get(source)
        assert q_full is not None, f"missing draft distribution for node {cur}"
        q_cur = transform(q_full, top_p, temperature)
        accepted_child = None
        for rank, cid in enumerate(children, start=1):
            token = tree.node(cid).token
            q_val = q_cur[token]
            if q_val <= 0.0:
                labels.setdefault(cid, "rejected")
                continue
            if rng.random() < accept_prob(p_cur[token], q_val):
                accepted_child = (rank, cid)
                break
            labels.setdefault(cid, "rejected")
            p_cur = residual_distribution(p_cur, q_cur)
        if accepted_child is None:
            rejected_step = True
            bonus = _draw(p_cur, rng)
            break
        rank, cid = accepted_child
        child = tree.node(cid)
        if child.token == eos_token:
            bonus = child.token  # end of sequence always arrives as the bonus
            break
        labels[cid] = "accepted"
        path.append(cid)
        tokens.append(child.token)
        ranks.append(rank)
        merged = merged or child.shared_logits
        cur = cid
        p_cur = transform(dists[cur], top_p, temperature)
    return VerificationResult(
        accepted_path=path,
        accepted_tokens=tokens,
        bonus_token=bonus,
        accept_ranks=ranks,
        rejected_step=rejected_step,
        merged_token_accepted=merged,
        labels=labels,
        forward=event,
    )


def commit(
    result: VerificationResult, caches: KVCacheState, context: list[int]
) -> list[int]:
    """Extend the context with the accepted tokens plus the bonus token.

    Advances both cache prefixes to the new committed length and clears the
    stage memo; every stage grows the context by at least one token.
    """
    new_context = list(context) + result.accepted_tokens + [result.bonus_token]
    caches.advance(len(new_context))
    caches.clear_stage()
    return new_context
