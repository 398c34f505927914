"""Execution-path enumeration over statement-level CFGs.

Paths run from the entry node to an exit; each loop-back edge may be taken at
most ``unroll_bound`` times per path. Enumeration is exhaustive under that
bound and returned in lexicographic node-sequence order, so results are
deterministic byte for byte.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

from sklearn.base import BaseEstimator, TransformerMixin

from .cfg import LOOP_BACK, ControlFlowGraph, build_cfg

SELECTION_POLICIES = ("coverage_greedy", "longest_first", "lexicographic")


class PathError(ValueError):
    pass


class PathTruncationWarning(UserWarning):
    """Emitted when the per-path node cap pruned at least one search branch."""


@dataclass(frozen=True)
class ExecutionPath:
    node_sequence: tuple[int, ...]
    rendered_text: str
    is_pad: bool = False


@dataclass(frozen=True)
class PathConfig:
    max_paths: int = 3
    unroll_bound: int = 1
    max_path_nodes: int = 128
    selection_policy: str = "coverage_greedy"

    def __post_init__(self):
        if self.max_paths < 1:
            raise PathError("max_paths must be >= 1")
        if self.unroll_bound < 0:
            raise PathError("unroll_bound must be >= 0")
        if self.max_path_nodes < 1:
            raise PathError("max_path_nodes must be >= 1")
        if self.selection_policy not in SELECTION_POLICIES:
            raise PathError(f"unknown selection policy {self.selection_policy!r}")


def render_path(cfg: ControlFlowGraph, node_sequence) -> str:
    return "\n".join(cfg.node(i).text for i in node_sequence)


def enumerate_paths(cfg: ControlFlowGraph, config: PathConfig = PathConfig()) -> list[ExecutionPath]:
    """All entry-to-exit paths under the unroll bound and node cap.

    Emits PathTruncationWarning when the node cap pruned a branch. Never
    returns an empty list for a valid CFG: the entry always reaches an exit.
    """
    # parallel edges (e.g. true and false branches of an empty if meeting at
    # the same node) collapse to one step; only an edge whose every kind is
    # loop-back consumes the unroll budget
    kinds: dict[tuple[int, int], set[str]] = {}
    for e in cfg.edges:
        kinds.setdefault((e.src, e.dst), set()).add(e.kind)
    succ: dict[int, list[tuple[int, bool]]] = {n.node_id: [] for n in cfg.nodes}
    for (src, dst), ks in kinds.items():
        succ[src].append((dst, ks == {LOOP_BACK}))
    for lst in succ.values():
        lst.sort()

    found: set[tuple[int, ...]] = set()
    truncated = False

    def walk(node: int, trail: list[int], back_uses: dict[tuple[int, int], int]) -> None:
        nonlocal truncated
        if len(trail) > config.max_path_nodes:
            truncated = True
            return
        if node in cfg.exits:
            found.add(tuple(trail))
            return
        for dst, needs_budget in succ[node]:
            if needs_budget:
                key = (node, dst)
                if back_uses.get(key, 0) >= config.unroll_bound:
                    continue
                back_uses[key] = back_uses.get(key, 0) + 1
                walk(dst, trail + [dst], back_uses)
                back_uses[key] -= 1
            else:
                walk(dst, trail + [dst], back_uses)

    walk(cfg.entry, [cfg.entry], {})
    if truncated:
        warnings.warn("path enumeration pruned branches at the node cap",
                      PathTruncationWarning, stacklevel=2)
    return [ExecutionPath(seq, render_path(cfg, seq)) for seq in sorted(found)]


def check_path(cfg: ControlFlowGraph, path: ExecutionPath, unroll_bound: int) -> None:
    """Standalone validity check: edge-connected, entry to exit, bounded
    loop-back usage. Raises PathError on the first violation."""
    seq = path.node_sequence
    if not seq:
        raise PathError("empty path")
    if seq[0] != cfg.entry:
        raise PathError("path does not start at the entry node")
    if seq[-1] not in cfg.exits:
        raise PathError("path does not end at an exit node")
    edge_kinds: dict[tuple[int, int], set[str]] = {}
    for e in cfg.edges:
        edge_kinds.setdefault((e.src, e.dst), set()).add(e.kind)
    back_uses: dict[tuple[int, int], int] = {}
    for a, b in zip(seq, seq[1:]):
        if (a, b) not in edge_kinds:
            raise PathError(f"no edge {a}->{b}")
        if edge_kinds[(a, b)] == {LOOP_BACK}:
            back_uses[(a, b)] = back_uses.get((a, b), 0) + 1
            if back_uses[(a, b)] > unroll_bound:
                raise PathError(f"loop-back edge {a}->{b} used beyond the unroll bound")
    if path.rendered_text != render_path(cfg, seq):
        raise PathError("rendered_text does not match the node sequence")


def select_paths(paths: list[ExecutionPath], config: PathConfig = PathConfig()) -> list[ExecutionPath]:
    """Pick ``max_paths`` paths under the configured policy.

    With fewer paths than requested, the last selected path is repeated and
    the copies are marked ``is_pad``.
    """
    if not paths:
        raise PathError("select_paths requires at least one path")
    n = config.max_paths
    if config.selection_policy == "lexicographic":
        chosen = sorted(paths, key=lambda p: p.node_sequence)[:n]
    elif config.selection_policy == "longest_first":
        chosen = sorted(paths, key=lambda p: (-len(p.node_sequence), p.node_sequence))[:n]
    else:
        chosen = _coverage_greedy(paths, n)
    while len(chosen) < n:
        chosen.append(replace(chosen[-1], is_pad=True))
    return chosen


def _coverage_greedy(paths: list[ExecutionPath], n: int) -> list[ExecutionPath]:
    remaining = sorted(paths, key=lambda p: p.node_sequence)
    covered: set[int] = set()
    chosen: list[ExecutionPath] = []
    while remaining and len(chosen) < n:
        best = min(remaining,
                   key=lambda p: (-len(set(p.node_sequence) - covered), p.node_sequence))
        chosen.append(best)
        covered |= set(best.node_sequence)
        remaining.remove(best)
    return chosen


def extract_paths(source: str, config: PathConfig = PathConfig()) -> list[ExecutionPath]:
    """CFG construction, enumeration, and selection for one function."""
    cfg = build_cfg(source)
    return select_paths(enumerate_paths(cfg, config), config)


class PathExtractor(BaseEstimator, TransformerMixin):
    """Transformer mapping C function sources to fixed-size path lists.

    ``transform`` takes an iterable of source strings (or objects with a
    ``source`` attribute) and returns a list of ``max_paths``-long
    ExecutionPath lists.
    """

    def __init__(self, max_paths: int = 3, unroll_bound: int = 1,
                 max_path_nodes: int = 128, selection_policy: str = "coverage_greedy"):
        self.max_paths = max_paths
        self.unroll_bound = unroll_bound
        self.max_path_nodes = max_path_nodes
        self.selection_policy = selection_policy

    def _config(self) -> PathConfig:
        return PathConfig(max_paths=self.max_paths, unroll_bound=self.unroll_bound,
                          max_path_nodes=self.max_path_nodes,
                          selection_policy=self.selection_policy)

    def fit(self, X, y=None):
        self._config()  # validate parameters
        return self

    def transform(self, X):
        config = self._config()
        out = []
        for item in X:
            source = item if isinstance(item, str) else item.source
            out.append(extract_paths(source, config))
        return out
