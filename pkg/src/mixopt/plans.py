"""Plan-tree algebra: catalogs, queries, operator trees, search states,
successor expansion, and exhaustive enumeration.

Everything here is an immutable value object.  Plans are binary trees of
physical operators; a search state is a forest of partial trees plus the
set of tables not yet scanned.  Cross products are forbidden throughout:
two subtrees may only be joined if at least one query predicate connects
them.  Left/right orientation is significant (several physical operators
cost their inputs asymmetrically).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol, Sequence

SCAN_OPERATOR = "SeqScan"
JOIN_OPERATORS = ("HashJoin", "MergeJoin", "NestLoopJoin")
ALL_OPERATORS = (SCAN_OPERATOR,) + JOIN_OPERATORS

_JOIN_RANK = {op: i for i, op in enumerate(JOIN_OPERATORS)}


class InvariantViolation(ValueError):
    """A domain object failed one of its structural invariants."""


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise InvariantViolation(message)


# ---------------------------------------------------------------------------
# Catalog and queries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Catalog:
    """Synthetic schema: table row counts plus join edges with selectivities.

    ``tables`` maps table ids to positive row counts; ``edges`` holds one
    entry per unordered table pair, with a selectivity in (0, 1].  Both are
    normalized to a sorted canonical order on construction.
    """

    tables: tuple[tuple[str, int], ...]
    edges: tuple[tuple[str, str, float], ...]

    def __post_init__(self):
        tables = tuple(sorted((str(t), int(r)) for t, r in self.tables))
        ids = [t for t, _ in tables]
        _check(len(set(ids)) == len(ids), "duplicate table ids")
        _check(all(r >= 1 for _, r in tables), "row counts must be >= 1")

        known = set(ids)
        seen_pairs = set()
        edges = []
        for a, b, sel in self.edges:
            a, b = str(a), str(b)
            if a > b:
                a, b = b, a
            _check(a != b, f"self-edge on {a}")
            _check(a in known and b in known, f"edge ({a}, {b}) references unknown table")
            _check((a, b) not in seen_pairs, f"duplicate edge ({a}, {b})")
            _check(0.0 < sel <= 1.0, f"selectivity of ({a}, {b}) outside (0, 1]")
            seen_pairs.add((a, b))
            edges.append((a, b, float(sel)))
        edges.sort()

        object.__setattr__(self, "tables", tables)
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "_rows", {t: r for t, r in tables})
        object.__setattr__(self, "_sel", {(a, b): s for a, b, s in edges})

    @property
    def table_ids(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.tables)

    @property
    def edge_pairs(self) -> tuple[tuple[str, str], ...]:
        return tuple((a, b) for a, b, _ in self.edges)

    def row_count(self, table: str) -> int:
        return self._rows[table]

    def has_table(self, table: str) -> bool:
        return table in self._rows

    def selectivity(self, a: str, b: str) -> float:
        if a > b:
            a, b = b, a
        return self._sel[(a, b)]

    def has_edge(self, a: str, b: str) -> bool:
        if a > b:
            a, b = b, a
        return (a, b) in self._sel


@dataclass(frozen=True)
class Query:
    """A join query: a connected set of relations plus the predicate edges
    linking them (each predicate references a catalog edge)."""

    query_id: str
    relations: frozenset[str]
    predicates: tuple[tuple[str, str], ...]

    def __post_init__(self):
        relations = frozenset(str(r) for r in self.relations)
        _check(len(relations) >= 2, "queries must join at least two relations")
        preds = []
        for a, b in self.predicates:
            a, b = str(a), str(b)
            if a > b:
                a, b = b, a
            _check(a != b, "self-join predicates are not allowed")
            _check(a in relations and b in relations,
                   f"predicate ({a}, {b}) leaves the relation set")
            preds.append((a, b))
        preds = tuple(sorted(set(preds)))

        # Connectivity of the induced join graph.
        adjacency: dict[str, set[str]] = {r: set() for r in relations}
        for a, b in preds:
            adjacency[a].add(b)
            adjacency[b].add(a)
        start = min(relations)
        seen = {start}
        stack = [start]
        while stack:
            for nxt in adjacency[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        _check(seen == relations, f"query {self.query_id} join graph is disconnected")

        object.__setattr__(self, "relations", relations)
        object.__setattr__(self, "predicates", preds)

    def predicates_between(self, left: frozenset[str], right: frozenset[str]
                           ) -> list[tuple[str, str]]:
        """Predicate edges with one endpoint on each side."""
        out = []
        for a, b in self.predicates:
            if (a in left and b in right) or (a in right and b in left):
                out.append((a, b))
        return out


# ---------------------------------------------------------------------------
# Plan nodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanNode:
    """One operator in a plan tree, annotated with cardinality/cost estimates.

    The canonical key is computed once at construction and depends only on
    the structure (operator, orientation, leaf relations), never on the
    numeric annotations, so the same subplan keeps its key under any
    cardinality model.
    """

    operator: str
    relation: Optional[str]
    children: tuple["PlanNode", ...]
    est_cardinality: float
    est_cost: float

    def __post_init__(self):
        _check(self.operator in ALL_OPERATORS, f"unknown operator {self.operator!r}")
        _check(self.est_cardinality >= 0.0, "negative cardinality estimate")
        _check(self.est_cost >= 0.0, "negative cost estimate")
        if self.operator == SCAN_OPERATOR:
            _check(self.relation is not None, "scan nodes need a relation")
            _check(not self.children, "scan nodes are leaves")
            relations = frozenset((self.relation,))
            key = b'["' + SCAN_OPERATOR.encode() + b'",' + \
                json.dumps(self.relation).encode() + b"]"
        else:
            _check(self.relation is None, "join nodes carry no relation")
            _check(len(self.children) == 2, "join nodes have exactly two children")
            left, right = self.children
            _check(not (left.relations & right.relations),
                   "join children must cover disjoint relation sets")
            relations = left.relations | right.relations
            key = b'["' + self.operator.encode() + b'",' + left.key + b"," + \
                right.key + b"]"
        object.__setattr__(self, "relations", relations)
        object.__setattr__(self, "key", key)

    @property
    def is_leaf(self) -> bool:
        return self.operator == SCAN_OPERATOR

    @property
    def left(self) -> "PlanNode":
        return self.children[0]

    @property
    def right(self) -> "PlanNode":
        return self.children[1]

    def walk(self) -> Iterable["PlanNode"]:
        """Pre-order traversal of the subtree rooted here."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


def scan_node(table: str, cardinality: float, cost: float) -> PlanNode:
    return PlanNode(SCAN_OPERATOR, table, (), float(cardinality), float(cost))


def join_node(operator: str, left: PlanNode, right: PlanNode,
              cardinality: float, cost: float) -> PlanNode:
    return PlanNode(operator, None, (left, right), float(cardinality), float(cost))


def canonical_key(node: PlanNode) -> bytes:
    """Deterministic byte key, injective over structurally distinct subplans.

    The key is the compact JSON encoding ``["Op", left, right]`` /
    ``["SeqScan", "table"]``; it is stable across processes and identical
    for subplans that share operators, orientation, and leaf relations.
    """
    return node.key


def subplans(plan: "Plan") -> list[PlanNode]:
    """Every node of the tree; 2n-1 entries for an n-relation plan."""
    return list(plan.root.walk())


@dataclass(frozen=True)
class Plan:
    """A complete operator tree for one query."""

    root: PlanNode
    query_id: str

    def __post_init__(self):
        leaves = [n.relation for n in self.root.walk() if n.is_leaf]
        _check(len(leaves) == len(set(leaves)), "a plan may scan each table once")

    @property
    def key(self) -> bytes:
        return self.root.key


def validate_plan(plan: Plan, query: Query) -> None:
    """Raise InvariantViolation unless the plan covers the query exactly and
    joins only predicate-connected subtrees."""
    _check(plan.root.relations == query.relations,
           "plan leaves do not cover the query's relations")
    for node in plan.root.walk():
        if not node.is_leaf:
            _check(bool(query.predicates_between(node.left.relations,
                                                 node.right.relations)),
                   "cross-product join in plan")


# ---------------------------------------------------------------------------
# Search states and expansion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchState:
    """A forest of disjoint partial plans plus the unscanned tables.

    The forest is kept sorted by canonical key so states reached through
    different action orders compare equal and share one key.
    """

    forest: tuple[PlanNode, ...]
    remaining: frozenset[str]

    def __post_init__(self):
        forest = tuple(sorted(self.forest, key=lambda n: n.key))
        covered: set[str] = set()
        for tree in forest:
            _check(not (covered & tree.relations), "forest trees overlap")
            covered.update(tree.relations)
        _check(not (covered & self.remaining),
               "remaining tables overlap scanned trees")
        object.__setattr__(self, "forest", forest)
        object.__setattr__(self, "remaining", frozenset(self.remaining))

    @property
    def is_terminal(self) -> bool:
        return len(self.forest) == 1 and not self.remaining

    @property
    def key(self) -> bytes:
        trees = b"|".join(t.key for t in self.forest)
        rest = ",".join(sorted(self.remaining)).encode()
        return trees + b"#" + rest


def initial_state(query: Query) -> SearchState:
    return SearchState((), query.relations)


class Annotator(Protocol):
    """Produces (cardinality, cost) estimates for newly built nodes."""

    def leaf(self, table: str) -> tuple[float, float]: ...

    def join(self, operator: str, left: PlanNode, right: PlanNode
             ) -> tuple[float, float]: ...


def _check_state(state: SearchState, query: Query) -> None:
    covered: set[str] = set()
    for tree in state.forest:
        covered.update(tree.relations)
    _check(covered | state.remaining == query.relations and
           not (covered & state.remaining),
           "state does not partition the query's relation set")


def expand(state: SearchState, query: Query, catalog: Catalog,
           annotator: Annotator,
           operators: Sequence[str] = JOIN_OPERATORS) -> list[SearchState]:
    """All legal successors of a search state, in canonical order.

    Successors are (a) one scan per remaining table and (b) one join per
    connected unordered tree pair, join operator, and orientation.  Scans
    come first ordered by table id; joins follow ordered by (operator rank,
    left key, right key).  Terminal states have no successors.
    """
    if state.is_terminal:
        return []
    _check_state(state, query)
    for table in state.remaining:
        _check(catalog.has_table(table), f"unknown table {table!r}")

    successors: list[SearchState] = []
    for table in sorted(state.remaining):
        card, cost = annotator.leaf(table)
        tree = scan_node(table, card, cost)
        successors.append(SearchState(state.forest + (tree,),
                                      state.remaining - {table}))

    joins: list[tuple[tuple[int, bytes, bytes], SearchState]] = []
    forest = state.forest
    for i in range(len(forest)):
        for j in range(i + 1, len(forest)):
            a, b = forest[i], forest[j]
            if not query.predicates_between(a.relations, b.relations):
                continue
            rest = forest[:i] + forest[i + 1:j] + forest[j + 1:]
            for op in operators:
                rank = _JOIN_RANK[op]
                for left, right in ((a, b), (b, a)):
                    card, cost = annotator.join(op, left, right)
                    tree = join_node(op, left, right, card, cost)
                    joins.append(((rank, left.key, right.key),
                                  SearchState(rest + (tree,), state.remaining)))
    joins.sort(key=lambda item: item[0])
    successors.extend(s for _, s in joins)
    return successors


# ---------------------------------------------------------------------------
# Exhaustive enumeration (test oracle)
# ---------------------------------------------------------------------------


def search_space_lower_bound(n: int) -> int:
    """(2(n-1))! / (n-1)!, the ordered-binary-tree count over n leaves."""
    out = 1
    for i in range(n, 2 * (n - 1) + 1):
        out *= i
    return out


def enumerate_all(query: Query, catalog: Catalog, annotator: Annotator,
                  operators: Sequence[str] = JOIN_OPERATORS,
                  bound: int = 7) -> list[Plan]:
    """Every valid complete plan, each exactly once.  Test oracle only.

    Enumerates by recursive ordered splits of connected relation subsets,
    which visits each distinct tree exactly once (every tree has a unique
    root decomposition).  Refuses queries beyond ``bound`` relations.
    """
    n = len(query.relations)
    if n > bound:
        estimate = search_space_lower_bound(n) * len(operators) ** (n - 1)
        raise ValueError(
            f"enumeration refused: {n} relations exceed the bound of {bound} "
            f"(at least {estimate} plans)")

    memo: dict[frozenset[str], list[PlanNode]] = {}

    def trees(relset: frozenset[str]) -> list[PlanNode]:
        if relset in memo:
            return memo[relset]
        if len(relset) == 1:
            (table,) = relset
            card, cost = annotator.leaf(table)
            out = [scan_node(table, card, cost)]
        else:
            out = []
            members = sorted(relset)
            # Every nonempty proper subset becomes the left input once, so
            # both orientations of each split are visited exactly once.
            m = len(members)
            for mask in range(1, (1 << m) - 1):
                left_set = frozenset(members[i] for i in range(m)
                                     if mask & (1 << i))
                right_set = relset - left_set
                if not query.predicates_between(left_set, right_set):
                    continue
                for left in trees(left_set):
                    for right in trees(right_set):
                        for op in operators:
                            card, cost = annotator.join(op, left, right)
                            out.append(join_node(op, left, right, card, cost))
        memo[relset] = out
        return out

    plans = [Plan(root, query.query_id) for root in trees(query.relations)]
    plans.sort(key=lambda p: p.key)
    return plans


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def node_to_json(node: PlanNode) -> dict:
    """Canonical JSON form: {op, rel?, card, cost, children}."""
    obj: dict = {"op": node.operator, "card": node.est_cardinality,
                 "cost": node.est_cost,
                 "children": [node_to_json(c) for c in node.children]}
    if node.relation is not None:
        obj["rel"] = node.relation
    return obj


def node_from_json(obj: dict) -> PlanNode:
    children = tuple(node_from_json(c) for c in obj.get("children", ()))
    return PlanNode(obj["op"], obj.get("rel"), children,
                    float(obj["card"]), float(obj["cost"]))


def plan_to_json(plan: Plan) -> dict:
    return {"query_id": plan.query_id, "root": node_to_json(plan.root)}


def plan_from_json(obj: dict) -> Plan:
    return Plan(node_from_json(obj["root"]), obj["query_id"])
