"""Draft token tree / DAG, flattening with ancestor masks, and unmerging.

Nodes are created in strictly increasing id order; id 0 is the virtual root
that anchors the committed context. Merge edges always point at earlier ids
and never at an ancestor, which keeps the structure acyclic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidMaskError

ROOT_ID = 0
ROOT_TOKEN = -1


class NodeStatus(str, Enum):
    EXPANDABLE = "expandable"
    LEAF_PRUNED_PROB = "leaf-pruned-prob"
    LEAF_PRUNED_SIBLING = "leaf-pruned-sibling"
    LEAF_DEPTH = "leaf-depth"
    LEAF_MERGED = "leaf-merged"


@dataclass
class DraftNode:
    id: int
    token: int
    q_prob: float
    parent: int | None
    depth: int
    status: NodeStatus
    children: list[int] = field(default_factory=list)
    merge_target: int | None = None
    # True for tokens materialized from a merge target's subtree at unmerge
    # time; their distributions were inherited, not computed.
    shared_logits: bool = False
    # Node whose cached draft distribution stands in for "the distribution
    # after this node's path". Differs from `id` only after unmerging.
    logits_source: int = 0

    def __post_init__(self) -> None:
        if self.logits_source == 0:
            self.logits_source = self.id

    @property
    def is_leaf_status(self) -> bool:
        return self.status is not NodeStatus.EXPANDABLE


class TokenGraph:
    """Store of drafted hypotheses rooted at the committed context.

    `max_out_degree`, `depth_limit`, and `tau` bound construction; the
    trailing tau-gram index maps each tau-gram to the first expandable node
    that completed it within the current draft stage.
    """

    def __init__(self, max_out_degree: int, depth_limit: int, tau: int):
        if max_out_degree < 1 or depth_limit < 1 or tau < 1:
            raise ValueError("max_out_degree, depth_limit, and tau must be >= 1")
        self.max_out_degree = max_out_degree
        self.depth_limit = depth_limit
        self.tau = tau
        root = DraftNode(
            id=ROOT_ID, token=ROOT_TOKEN, q_prob=1.0, parent=None, depth=0,
            status=NodeStatus.EXPANDABLE,
        )
        self.nodes: dict[int, DraftNode] = {ROOT_ID: root}
        self.ngram_index: dict[tuple[int, ...], int] = {}
        self._next_id = 1

    @property
    def root(self) -> DraftNode:
        return self.nodes[ROOT_ID]

    def __len__(self) -> int:
        """Number of non-root nodes."""
        return len(self.nodes) - 1

    def node(self, node_id: int) -> DraftNode:
        return self.nodes[node_id]

    def non_root_ids(self) -> list[int]:
        return [nid for nid in self.nodes if nid != ROOT_ID]

    def add_child(
        self,
        parent_id: int,
        token: int,
        q_prob: float,
        status: NodeStatus,
        *,
        shared_logits: bool = False,
    ) -> DraftNode:
        parent = self.nodes[parent_id]
        depth = parent.depth + 1
        if depth > self.depth_limit:
            raise ValueError(f"child at depth {depth} exceeds limit {self.depth_limit}")
        if len(parent.children) >= self.max_out_degree:
            raise ValueError("parent already has max_out_degree children")
        for sibling_id in parent.children:
            sibling = self.nodes[sibling_id]
            if sibling.token == token:
                raise ValueError(f"duplicate sibling token {token}")
            if (sibling.q_prob, -sibling.token) < (q_prob, -token):
                raise ValueError("children must be appended in descending q_prob order")
        node = DraftNode(
            id=self._next_id, token=token, q_prob=q_prob, parent=parent_id,
            depth=depth, status=status, shared_logits=shared_logits,
        )
        self.nodes[node.id] = node
        parent.children.append(node.id)
        self._next_id += 1
        return node

    def path_tokens(self, node_id: int) -> list[int]:
        """Tokens from the root's first drafted step down to ``node_id``."""
        path: list[int] = []
        nid: int | None = node_id
        while nid is not None and nid != ROOT_ID:
            node = self.nodes[nid]
            path.append(node.token)
            nid = node.parent
        path.reverse()
        return path

    def path_ids(self, node_id: int) -> list[int]:
        ids: list[int] = []
        nid: int | None = node_id
        while nid is not None and nid != ROOT_ID:
            ids.append(nid)
            nid = self.nodes[nid].parent
        ids.reverse()
        return ids

    def is_ancestor(self, ancestor_id: int, node_id: int) -> bool:
        """True when ``ancestor_id`` lies strictly above ``node_id``."""
        nid = self.nodes[node_id].parent
        while nid is not None:
            if nid == ancestor_id:
                return True
            nid = self.nodes[nid].parent
        return False

    def has_merge_edges(self) -> bool:
        return any(n.merge_target is not None for n in self.nodes.values())

    def drafted_token_count(self) -> int:
        """Nodes whose token the draft model actually generated this stage.

        Copies materialized at unmerge time carry shared logits and are
        excluded; merged leaves themselves were generated and count.
        """
        return sum(
            1 for nid, n in self.nodes.items()
            if nid != ROOT_ID and not n.shared_logits
        )

    def to_lines(self) -> list[str]:
        """One node per line: id parent token q_prob status merge_target."""
        lines = []
        for nid, n in self.nodes.items():
            if nid == ROOT_ID:
                continue
            target = "-" if n.merge_target is None else str(n.merge_target)
            shared = "1" if n.shared_logits else "0"
            lines.append(
                f"{n.id} {n.parent} {n.token} {n.q_prob!r} {n.status.value} {target} {shared}"
            )
        return lines

    @classmethod
    def from_lines(
        cls, lines: list[str], max_out_degree: int, depth_limit: int, tau: int
    ) -> "TokenGraph":
        graph = cls(max_out_degree, depth_limit, tau)
        for line in lines:
            parts = line.split()
            if len(parts) != 7:
                raise ValueError(f"bad graph line: {line!r}")
            nid, parent, token = int(parts[0]), int(parts[1]), int(parts[2])
            q_prob = float(parts[3])
            status = NodeStatus(parts[4])
            node = graph.add_child(
                parent, token, q_prob, status, shared_logits=parts[6] == "1"
            )
            if node.id != nid:
                raise ValueError("graph lines out of creation order")
            if parts[5] != "-":
                node.merge_target = int(parts[5])
        return graph


@dataclass
class Hypothesis:
    """One drafted root-to-leaf continuation with its draft probabilities."""

    tokens: list[int]
    q_probs: list[float]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class FlattenedBatch:
    """Topologically ordered node sequence plus ancestor attention mask.

    ``mask[i][j]`` is True iff position j holds an ancestor-or-self of
    position i; every position implicitly attends to the whole committed
    prompt as well.
    """

    positions: list[int]
    tokens: list[int]
    mask: np.ndarray

    def validate(self) -> None:
        n = len(self.positions)
        if self.mask.shape != (n, n) or len(self.tokens) != n:
            raise InvalidMaskError("mask shape does not match batch size")
        if n == 0:
            return
        if not np.all(np.diag(self.mask)):
            raise InvalidMaskError("positions must attend to themselves")
        if np.any(np.triu(self.mask, k=1)):
            raise InvalidMaskError("mask must be lower-triangular (parents precede children)")
        # Each row must equal its deepest attended row plus itself: exactly
        # the ancestor-closure property.
        for i in range(n):
            above = np.flatnonzero(self.mask[i, :i])
            expected = np.zeros(n, dtype=bool)
            if len(above):
                expected |= self.mask[above[-1]]
            expected[i] = True
            if not np.array_equal(self.mask[i], expected):
                raise InvalidMaskError(f"row {i} attends outside its ancestor closure")

    def ancestor_paths(self) -> list[list[int]]:
        """Per position, the token path root->position (self included)."""
        self.validate()
        tokens = np.asarray(self.tokens)
        return [tokens[np.flatnonzero(self.mask[i])].tolist() for i in range(len(self.positions))]


def flatten(graph: TokenGraph, node_ids: list[int] | None = None) -> FlattenedBatch:
    """Flatten ``graph`` (or an ancestor-closed subset) in creation order."""
    if node_ids is None:
        node_ids = graph.non_root_ids()
    index = {nid: i for i, nid in enumerate(node_ids)}
    n = len(node_ids)
    mask = np.zeros((n, n), dtype=bool)
    tokens = []
    for i, nid in enumerate(node_ids):
        node = graph.node(nid)
        tokens.append(node.token)
        parent = node.parent
        if parent != ROOT_ID:
            if parent not in index:
                raise ValueError(f"node {nid} included without its parent {parent}")
            mask[i] |= mask[index[parent]]
        mask[i, i] = True
    return FlattenedBatch(positions=list(node_ids), tokens=tokens, mask=mask)


def trailing_ngram(graph: TokenGraph, node_id: int, tau: int) -> tuple[int, ...] | None:
    """Last ``tau`` drafted tokens ending at ``node_id``; None above depth tau.

    Committed context tokens never participate: paths shallower than tau
    have no trailing tau-gram.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    node = graph.node(node_id)
    if node.depth < tau:
        return None
    gram = []
    nid = node_id
    for _ in range(tau):
        n = graph.node(nid)
        gram.append(n.token)
        nid = n.parent  # type: ignore[assignment]
    gram.reverse()
    return tuple(gram)


def max_node_count(k: int, gamma: int) -> int:
    """Upper bound on token-tree size at out-degree k and depth gamma."""
    if k < 1 or gamma < 0:
        raise ValueError("k must be >= 1 and gamma >= 0")
    if k == 1:
        return gamma + 1
    return (k ** (gamma + 1) - 1) // (k - 1)


def unmerge(graph: TokenGraph) -> TokenGraph:
    """Expand every merge edge into a copy of its target's subtree.

    Nodes are processed in creation order; copies keep the source q_prob,
    carry the shared-logits flag, and are truncated at the depth limit
    (a truncated copy becomes a depth leaf, mirroring what drafting would
    have produced). The result is a tree with no merge edges.
    """
    out = TokenGraph(graph.max_out_degree, graph.depth_limit, graph.tau)
    for nid in graph.non_root_ids():
        src = graph.node(nid)
        node = out.add_child(
            src.parent, src.token, src.q_prob, src.status,  # type: ignore[arg-type]
            shared_logits=src.shared_logits,
        )
        node.merge_target = src.merge_target
        node.logits_source = src.logits_source

    order = out.non_root_ids()
    i = 0
    while i < len(order):
        node = out.node(order[i])
        i += 1
        if node.status is not NodeStatus.LEAF_MERGED:
            continue
        target_id = node.merge_target
        assert target_id is not None
        node.merge_target = None
        if node.depth >= out.depth_limit:
            node.status = NodeStatus.LEAF_DEPTH
            continue
        node.status = NodeStatus.EXPANDABLE
        node.logits_source = out.node(target_id).logits_source
        stack = [(node.id, child_id) for child_id in reversed(out.node(target_id).children)]
        while stack:
            dst_parent, src_id = stack.pop()
            src = out.node(src_id)
            depth = out.node(dst_parent).depth + 1
            status = src.status
            if depth >= out.depth_limit and status in (NodeStatus.EXPANDABLE, NodeStatus.LEAF_MERGED):
                status = NodeStatus.LEAF_DEPTH
            copy = out.add_child(
                dst_parent, src.token, src.q_prob, status, shared_logits=True
            )
            copy.logits_source = src.logits_source
            if status is NodeStatus.LEAF_MERGED:
                copy.merge_target = src.merge_target
                order.append(copy.id)
            elif status is NodeStatus.EXPANDABLE:
                stack.extend((copy.id, c) for c in reversed(src.children))
    return out
