"""Delegate-style partitioning of operator graphs.

Supported nodes are grouped into delegate subgraphs; everything else runs on
the CPU. A plan is valid when

* every delegate subgraph is connected (undirected, using only its own nodes);
* contracting each subgraph into a single node leaves the graph acyclic, so the
  subgraphs and CPU ops can still be executed one after another.

Among valid plans :func:`partition` returns one with the fewest delegate
subgraphs. Ties go to the lexicographically smallest assignment vector over
node ids in sorted order, with subgraph indices numbered by first appearance
in that order. The search is exact up to ``max_expansions`` search nodes;
beyond that a greedy topological schedule plus pairwise merging is used and the
plan is flagged ``exact=False``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

import yaml

from .core import Precision
from .errors import ConfigError, CycleError, GraphError, MissingCostError

OP_KINDS = (
    "ADD", "AVERAGE_POOL_2D", "BATCH_MATMUL", "CONCATENATION", "CONV_2D",
    "CUSTOM", "DEPTH_TO_SPACE", "DEPTHWISE_CONV_2D", "FULLY_CONNECTED",
    "HARD_SWISH", "LOGISTIC", "LSTM", "MAX_POOL_2D", "MEAN", "MUL", "PAD",
    "PRELU", "RELU", "RELU6", "RESHAPE", "RESIZE_BILINEAR", "SOFTMAX",
    "SPACE_TO_DEPTH", "SUB", "TANH", "TRANSPOSE_CONV",
)

DELEGATE = "delegate"
CPU = "cpu"

SupportPredicate = Callable[[str, Precision], bool]


@dataclass(frozen=True)
class OpNode:
    id: str
    kind: str
    precision: Precision


@dataclass(frozen=True)
class OpGraph:
    nodes: tuple[OpNode, ...]
    edges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise GraphError(f"duplicate node ids: {dupes}")
        known = set(ids)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise GraphError(f"edge {a}->{b} references an unknown node")
            if a == b:
                raise CycleError(f"self-loop on {a}")

    @property
    def node_ids(self) -> list[str]:
        return sorted(n.id for n in self.nodes)

    def node(self, node_id: str) -> OpNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def topological_order(self) -> list[str]:
        """Kahn's algorithm, smallest id first; raises CycleError."""
        indeg = {n.id: 0 for n in self.nodes}
        succ: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for a, b in set(self.edges):
            succ[a].append(b)
            indeg[b] += 1
        ready = sorted(i for i, d in indeg.items() if d == 0)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for w in succ[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
            ready.sort()
        if len(order) != len(self.nodes):
            stuck = sorted(set(indeg) - set(order))
            raise CycleError(f"graph has a cycle through {stuck}")
        return order


@dataclass(frozen=True)
class PartitionPlan:
    assignments: Mapping[str, Optional[int]]  # node id -> subgraph index, None = CPU
    subgraphs: tuple[frozenset[str], ...]
    boundary_crossings: int
    exact: bool = True

    def target(self, node_id: str) -> str:
        return CPU if self.assignments[node_id] is None else DELEGATE

    def label(self, node_id: str) -> str:
        k = self.assignments[node_id]
        return "CPU" if k is None else f"DELEGATE({k})"


# --- bitmask helpers --------------------------------------------------------

class _Index:
    """Graph in sorted-id order with bitmask adjacency."""

    def __init__(self, graph: OpGraph):
        graph.topological_order()  # cycle check
        self.ids = graph.node_ids
        self.pos = {v: i for i, v in enumerate(self.ids)}
        n = len(self.ids)
        self.n = n
        self.succ = [0] * n
        self.nbr = [0] * n
        self.edges = []
        for a, b in set(graph.edges):
            i, j = self.pos[a], self.pos[b]
            self.succ[i] |= 1 << j
            self.nbr[i] |= 1 << j
            self.nbr[j] |= 1 << i
            self.edges.append((i, j))
        self.edges.sort()

    def connected(self, members: int, allowed: int) -> bool:
        """Are all bits of ``members`` in one component of the graph induced on ``allowed``?"""
        if members == 0:
            return True
        start = members & -members
        seen = start
        frontier = start
        while frontier:
            v = (frontier & -frontier).bit_length() - 1
            frontier &= frontier - 1
            new = self.nbr[v] & allowed & ~seen
            seen |= new
            frontier |= new
        return members & ~seen == 0


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def _fixed_quotient_acyclic(ix: _Index, owner: list[int], groups: list[int]) -> bool:
    """Acyclicity of the quotient restricted to fixed nodes.

    ``owner[v]`` is a group index, ``-1`` for a CPU node, or ``-2`` for a
    supported node not yet assigned. Fixed quotient nodes are the groups and
    the CPU nodes; an edge F->G exists when some path leaves F and reaches G
    through unassigned nodes only. A cycle among two or more fixed nodes survives
    any completion of the assignment; at a complete assignment this is exactly
    the validity condition.
    """
    n = ix.n
    unassigned = 0
    for v in range(n):
        if owner[v] == -2:
            unassigned |= 1 << v
    # quotient node ids: groups 0..g-1, CPU node v -> g + v
    g = len(groups)

    def qid(v):
        return owner[v] if owner[v] >= 0 else g + v

    out: dict[int, set[int]] = {}
    sources = [(k, groups[k]) for k in range(g) if groups[k]]
    sources += [(g + v, 1 << v) for v in range(n) if owner[v] == -1]
    for q, members in sources:
        seen = 0
        frontier = 0
        for v in _bits(members):
            frontier |= ix.succ[v]
        targets = set()
        while frontier:
            v = (frontier & -frontier).bit_length() - 1
            frontier &= frontier - 1
            if seen >> v & 1:
                continue
            seen |= 1 << v
            if unassigned >> v & 1:
                frontier |= ix.succ[v] & ~seen
            else:
                t = qid(v)
                if t != q:
                    targets.add(t)
        out[q] = targets
    # Kahn on the fixed quotient
    nodes = [q for q, _ in sources]
    indeg = {q: 0 for q in nodes}
    for q in nodes:
        for t in out[q]:
            indeg[t] += 1
    ready = [q for q in nodes if indeg[q] == 0]
    done = 0
    while ready:
        q = ready.pop()
        done += 1
        for t in out[q]:
            indeg[t] -= 1
            if indeg[t] == 0:
                ready.append(t)
    return done == len(nodes)


class _Budget(Exception):
    pass


def _exact_search(ix: _Index, supported_mask: int, max_expansions: int) -> Optional[list[int]]:
    """Lexicographically first minimum-size valid grouping, or None if over budget."""
    n = ix.n
    order = list(_bits(supported_mask))
    if not order:
        return [-1] * n
    # components of the supported-induced graph give the lower bound
    comp = {}
    remaining = supported_mask
    c = 0
    while remaining:
        start = remaining & -remaining
        seen = start
        frontier = start
        while frontier:
            v = (frontier & -frontier).bit_length() - 1
            frontier &= frontier - 1
            new = ix.nbr[v] & supported_mask & ~seen
            seen |= new
            frontier |= new
        for v in _bits(seen):
            comp[v] = c
        c += 1
        remaining &= ~seen
    n_comp = c
    expansions = 0

    for k_max in range(n_comp, len(order) + 1):
        owner = [-1] * n
        for v in order:
            owner[v] = -2
        groups: list[int] = []
        comp_hits = [0] * n_comp

        def dfs(depth: int) -> bool:
            nonlocal expansions
            if depth == len(order):
                return True
            v = order[depth]
            for label in range(min(len(groups) + 1, k_max)):
                expansions += 1
                if expansions > max_expansions:
                    raise _Budget
                new_group = label == len(groups)
                if new_group:
                    groups.append(0)
                groups[label] |= 1 << v
                owner[v] = label
                comp_hits[comp[v]] += 1
                untouched = sum(1 for h in comp_hits if h == 0)
                ok = len(groups) + untouched <= k_max
                if ok:
                    allowed_extra = 0
                    for u in order[depth + 1:]:
                        allowed_extra |= 1 << u
                    ok = all(ix.connected(m, m | allowed_extra) for m in groups)
                if ok:
                    ok = _fixed_quotient_acyclic(ix, owner, groups)
                if ok and dfs(depth + 1):
                    return True
                comp_hits[comp[v]] -= 1
                owner[v] = -2
                groups[label] &= ~(1 << v)
                if new_group:
                    groups.pop()
            return False

        try:
            if dfs(0):
                labels = [-1] * n
                for v in order:
                    labels[v] = owner[v]
                return labels
        except _Budget:
            return None
    raise AssertionError("singleton grouping is always valid")


def _greedy(ix: _Index, supported_mask: int) -> list[int]:
    """Topological two-queue schedule, split into components, then merged pairwise."""
    n = ix.n
    pred_count = [0] * n
    for i, j in ix.edges:
        pred_count[j] += 1
    ready = {True: [], False: []}
    for v in range(n):
        if pred_count[v] == 0:
            ready[bool(supported_mask >> v & 1)].append(v)
    batches: list[int] = []
    kind = bool(ready[False] == [])  # start with CPU work if there is any
    left = n
    while left:
        if not ready[kind]:
            kind = not kind
            continue
        batch = 0
        while ready[kind]:
            ready[kind].sort()
            v = ready[kind].pop(0)
            batch |= 1 << v
            left -= 1
            for w in _bits(ix.succ[v]):
                pred_count[w] -= 1
                if pred_count[w] == 0:
                    ready[bool(supported_mask >> w & 1)].append(w)
        if kind:
            batches.append(batch)
        kind = not kind
    groups: list[int] = []
    for batch in batches:
        rest = batch
        while rest:
            start = rest & -rest
            seen = start
            frontier = start
            while frontier:
                v = (frontier & -frontier).bit_length() - 1
                frontier &= frontier - 1
                new = ix.nbr[v] & batch & ~seen
                seen |= new
                frontier |= new
            groups.append(seen)
            rest &= ~seen
    owner = [-1] * n
    for k, m in enumerate(groups):
        for v in _bits(m):
            owner[v] = k
    merged = True
    while merged:
        merged = False
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                union = groups[a] | groups[b]
                if not ix.connected(union, union):
                    continue
                trial_groups = groups[:a] + [union] + groups[a + 1:b] + groups[b + 1:]
                trial_owner = [-1] * n
                for k, m in enumerate(trial_groups):
                    for v in _bits(m):
                        trial_owner[v] = k
                if _fixed_quotient_acyclic(ix, trial_owner, trial_groups):
                    groups, owner = trial_groups, trial_owner
                    merged = True
                    break
            if merged:
                break
    return owner


def _canonical(labels: list[int], order: Iterable[int]) -> list[int]:
    """Renumber groups by first appearance in sorted-id order."""
    remap: dict[int, int] = {}
    out = list(labels)
    for v in order:
        if labels[v] >= 0:
            out[v] = remap.setdefault(labels[v], len(remap))
    return out


def _plan_from_labels(ix: _Index, labels: list[int], exact: bool) -> PartitionPlan:
    labels = _canonical(labels, range(ix.n))
    assignments = {ix.ids[v]: (labels[v] if labels[v] >= 0 else None) for v in range(ix.n)}
    k = max(labels, default=-1) + 1
    subgraphs = tuple(frozenset(ix.ids[v] for v in range(ix.n) if labels[v] == i) for i in range(k))
    crossings = sum(1 for i, j in ix.edges if labels[i] != labels[j])
    return PartitionPlan(assignments=assignments, subgraphs=subgraphs,
                         boundary_crossings=crossings, exact=exact)


def partition(graph: OpGraph, supported: SupportPredicate, *,
              max_expansions: int = 200_000) -> PartitionPlan:
    """Assign supported ops to a minimum number of valid delegate subgraphs."""
    ix = _Index(graph)
    mask = 0
    for v, node_id in enumerate(ix.ids):
        node = graph.node(node_id)
        if supported(node.kind, node.precision):
            mask |= 1 << v
    labels = _exact_search(ix, mask, max_expansions)
    if labels is not None:
        return _plan_from_labels(ix, labels, exact=True)
    return _plan_from_labels(ix, _greedy(ix, mask), exact=False)


def plan_violations(graph: OpGraph, plan: PartitionPlan, supported: SupportPredicate) -> list[str]:
    """Every way ``plan`` breaks the partition contract; empty means valid."""
    ix = _Index(graph)
    problems = []
    if set(plan.assignments) != set(ix.ids):
        problems.append("assignments do not cover exactly the graph's nodes")
        return problems
    for node_id in ix.ids:
        node = graph.node(node_id)
        k = plan.assignments[node_id]
        if supported(node.kind, node.precision) and k is None:
            problems.append(f"supported node {node_id} left on CPU")
        if not supported(node.kind, node.precision) and k is not None:
            problems.append(f"unsupported node {node_id} delegated")
        if k is not None and not (0 <= k < len(plan.subgraphs) and node_id in plan.subgraphs[k]):
            problems.append(f"node {node_id} not listed in subgraph {k}")
    owner = [-1] * ix.n
    groups = []
    for k, members in enumerate(plan.subgraphs):
        m = 0
        for node_id in members:
            m |= 1 << ix.pos[node_id]
            owner[ix.pos[node_id]] = k
        groups.append(m)
        if not members:
            problems.append(f"subgraph {k} is empty")
        elif not ix.connected(m, m):
            problems.append(f"subgraph {k} is not connected")
    if not _fixed_quotient_acyclic(ix, owner, groups):
        problems.append("contracted graph has a cycle")
    crossings = sum(1 for i, j in ix.edges if owner[i] != owner[j])
    if crossings != plan.boundary_crossings:
        problems.append(f"boundary_crossings {plan.boundary_crossings} != {crossings}")
    return problems


def can_merge(graph: OpGraph, plan: PartitionPlan, a: int, b: int) -> bool:
    """Would merging subgraphs ``a`` and ``b`` still give a valid plan?"""
    ix = _Index(graph)
    owner = [-1] * ix.n
    groups = []
    for k, members in enumerate(plan.subgraphs):
        if k == b:
            continue
        m = 0
        for node_id in members:
            m |= 1 << ix.pos[node_id]
        if k == a:
            for node_id in plan.subgraphs[b]:
                m |= 1 << ix.pos[node_id]
        groups.append(m)
    for k, m in enumerate(groups):
        for v in _bits(m):
            owner[v] = k
    merged = groups[a if a < b else a - 1]
    return ix.connected(merged, merged) and _fixed_quotient_acyclic(ix, owner, groups)


def estimate_latency(plan: PartitionPlan, op_cost_ms: Mapping[str, Mapping[str, float]],
                     crossing_overhead_ms: float) -> float:
    """Sequential cost: per-op cost on its target plus a fixed cost per crossing."""
    total = 0.0
    for node_id in sorted(plan.assignments):
        costs = op_cost_ms.get(node_id)
        if costs is None or DELEGATE not in costs or CPU not in costs:
            raise MissingCostError(f"cost map lacks {DELEGATE}/{CPU} entries for node {node_id}")
        total += costs[plan.target(node_id)]
    return total + plan.boundary_crossings * crossing_overhead_ms


# --- file formats -----------------------------------------------------------

@dataclass
class GraphDocument:
    graph: OpGraph
    costs: dict[str, dict[str, float]] = field(default_factory=dict)


def _read_yaml(path: str | Path, what: str):
    try:
        return yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{what} {path} is not valid YAML/JSON: {exc}") from None


def parse_graph(doc: Mapping) -> GraphDocument:
    if not isinstance(doc, Mapping) or "nodes" not in doc:
        raise GraphError("graph document needs a 'nodes' list")
    nodes, costs = [], {}
    for entry in doc["nodes"]:
        try:
            kind = str(entry["kind"]).upper()
            prec = Precision(str(entry.get("precision", "fp32")).lower())
            node_id = str(entry["id"])
        except (KeyError, ValueError, TypeError) as exc:
            raise GraphError(f"bad node entry {entry!r}: {exc}") from None
        if kind not in OP_KINDS:
            raise GraphError(f"node {node_id}: unknown op kind {kind}")
        nodes.append(OpNode(node_id, kind, prec))
        if "cost_ms" in entry:
            costs[node_id] = {str(k): float(v) for k, v in entry["cost_ms"].items()}
    edges = tuple((str(a), str(b)) for a, b in doc.get("edges", []))
    return GraphDocument(OpGraph(tuple(nodes), edges), costs)


def load_graph(path: str | Path) -> GraphDocument:
    return parse_graph(_read_yaml(path, "graph"))


def parse_capabilities(doc: Mapping) -> set[tuple[str, Precision]]:
    """``supported: {KIND: [precisions]}``; the kind ``"*"`` stands for all kinds."""
    if not isinstance(doc, Mapping) or not isinstance(doc.get("supported"), Mapping):
        raise ConfigError("capability document needs a 'supported' mapping")
    out = set()
    for kind, precisions in doc["supported"].items():
        kinds = OP_KINDS if kind == "*" else (str(kind).upper(),)
        for k in kinds:
            if k not in OP_KINDS:
                raise ConfigError(f"unknown op kind {k} in capability document")
            for p in precisions:
                try:
                    out.add((k, Precision(str(p).lower())))
                except ValueError:
                    raise ConfigError(f"unknown precision {p!r} for {k}") from None
    for kind, precisions in (doc.get("unsupported") or {}).items():
        for p in precisions:
            out.discard((str(kind).upper(), Precision(str(p).lower())))
    return out


def load_capabilities(path: str | Path) -> set[tuple[str, Precision]]:
    return parse_capabilities(_read_yaml(path, "capability file"))
