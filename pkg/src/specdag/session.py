"""One decode session: the draft-verify loop with phase timing and accounting."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import DraftConfig
from .distributions import argmax_token, sample_token
from .drafting import ForwardEvent, run_draft_stage
from .graph import TokenGraph, unmerge
from .models import KVCacheState, LanguageModel
from .verification import commit, verify_deterministic, verify_stochastic


@dataclass
class StageRecord:
    stage: int
    drafted: int                 # tokens the draft model generated this stage
    verified_nodes: int          # size of the (unmerged) tree shown to the target
    forwards: list[ForwardEvent]
    accepted: int
    accept_ranks: list[int]
    rejected_step: bool
    path: list[int]
    bonus: int
    merged_accept: bool
    committed: int
    graph_lines: list[str]       # drafted structure before unmerging
    draft_s: float = 0.0
    verify_s: float = 0.0
    others_s: float = 0.0


@dataclass
class SessionResult:
    prompt_len: int
    output: list[int] = field(default_factory=list)
    stages: list[StageRecord] = field(default_factory=list)
    ended_by_eos: bool = False

    @property
    def accepted_from_draft(self) -> int:
        return sum(s.accepted for s in self.stages)


def session_rng(run_seed: int, prompt_index: int) -> np.random.Generator:
    """Per-prompt generator; parallel prompt execution cannot change results."""
    return np.random.default_rng([run_seed, prompt_index])


def decode_session(
    draft_model: LanguageModel | None,
    target_model: LanguageModel,
    prompt: list[int],
    config: DraftConfig,
    max_output: int,
    rng: np.random.Generator,
) -> SessionResult:
    """Run the full draft-verify loop until max_output or end-of-sequence.

    Every stage commits the accepted tokens plus one bonus token, so each
    iteration makes progress. The final stage caps acceptance so the output
    never exceeds max_output.
    """
    if config.mode != "vanilla" and draft_model is None:
        raise ValueError("drafting modes need a draft model")
    eos = target_model.vocab.eos_id
    context = list(prompt)
    result = SessionResult(prompt_len=len(prompt))
    caches = KVCacheState()
    caches.advance(len(context))
    while len(result.output) < max_output:
        remaining = max_output - len(result.output)
        before = len(context)
        if config.mode == "vanilla":
            record = _vanilla_stage(
                target_model, context, caches, config, rng, len(result.stages)
            )
        else:
            record = _draft_verify_stage(
                draft_model, target_model, context, caches, config, rng,
                len(result.stages), remaining, eos,
            )
        committed = context[before:]
        result.output.extend(committed)
        result.stages.append(record)
        if committed and committed[-1] == eos:
            result.ended_by_eos = True
            break
    return result


def _vanilla_stage(
    target_model: LanguageModel,
    context: list[int],
    caches: KVCacheState,
    config: DraftConfig,
    rng: np.random.Generator,
    stage_idx: int,
) -> StageRecord:
    t0 = time.perf_counter()
    event = ForwardEvent("verify", 1, len(context))
    dist = target_model.eval_next(context)
    if config.deterministic:
        token = argmax_token(dist)
    else:
        token = sample_token(dist, config.top_p, config.temperature, rng)
    t1 = time.perf_counter()
    context.append(token)
    caches.advance(len(context))
    t2 = time.perf_counter()
    return StageRecord(
        stage=stage_idx,
        drafted=0,
        verified_nodes=0,
        forwards=[event],
        accepted=0,
        accept_ranks=[],
        rejected_step=False,
        path=[],
        bonus=token,
        merged_accept=False,
        committed=1,
        graph_lines=[],
        draft_s=0.0,
        verify_s=t1 - t0,
        others_s=t2 - t1,
    )


def _draft_verify_stage(
    draft_model: LanguageModel,
    target_model: LanguageModel,
    context: list[int],
    caches: KVCacheState,
    config: DraftConfig,
    rng: np.random.Generator,
    stage_idx: int,
    remaining: int,
    eos: int,
) -> StageRecord:
    t0 = time.perf_counter()
    stage = run_draft_stage(draft_model, context, config, rng)
    caches.draft_memo.update(stage.dists)
    graph_lines = stage.graph.to_lines()
    drafted = stage.graph.drafted_token_count()
    t1 = time.perf_counter()

    tree: TokenGraph = unmerge(stage.graph) if stage.graph.has_merge_edges() else stage.graph
    if config.deterministic:
        verification = verify_deterministic(
            target_model, context, tree, eos_token=eos, max_accepted=remaining - 1
        )
    else:
        verification = verify_stochastic(
            target_model, context, tree, rng, caches.draft_memo,
            top_p=config.top_p, temperature=config.temperature,
            eos_token=eos, max_accepted=remaining - 1,
        )
    t2 = time.perf_counter()

    context[:] = commit(verification, caches, context)
    forwards = list(stage.forwards)
    if verification.forward is not None:
        forwards.append(verification.forward)
    t3 = time.perf_counter()
    return StageRecord(
        stage=stage_idx,
        drafted=drafted,
        verified_nodes=len(tree),
        forwards=forwards,
        accepted=verification.accepted,
        accept_ranks=verification.accept_ranks,
        rejected_step=verification.rejected_step,
        path=verification.accepted_path,
        bonus=verification.bonus_token,
        merged_accept=verification.merged_token_accepted,
        committed=verification.accepted + 1,
        graph_lines=graph_lines,
        draft_s=t1 - t0,
        verify_s=t2 - t1,
        others_s=t3 - t2,
    )
