"""Rank-aligned taxonomic tree with level-wise disjoint leaf partitions."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping

RANK_NAMES = ("species", "genus", "family", "order", "class")

TaxonId = Hashable


class TaxonomyError(ValueError):
    """Raised when a taxonomy violates a structural invariant."""


@dataclass(frozen=True)
class TaxonNode:
    id: TaxonId
    parent: TaxonId | None
    rank: int
    name: str = ""


@dataclass(frozen=True)
class Taxonomy:
    """Immutable rooted tree; every leaf sits at rank 0 and ranks are contiguous.

    Build with :meth:`from_records` so the invariants are validated.
    """

    nodes: Mapping[TaxonId, TaxonNode]
    root: TaxonId
    leaves: frozenset
    _children: Mapping[TaxonId, tuple] = field(repr=False, compare=False, default=None)

    @classmethod
    def from_records(cls, records: Iterable[Mapping], source: str = "<records>") -> "Taxonomy":
        """Validate ``{id, parent_id, rank, name}`` records and build the tree.

        Errors name the first offending record by its 1-based position.
        """
        nodes: dict = {}
        lineno: dict = {}
        for i, rec in enumerate(records, start=1):
            try:
                tid, parent, rank = rec["id"], rec.get("parent_id"), rec["rank"]
            except (KeyError, TypeError) as exc:
                raise TaxonomyError(f"{source}:{i}: malformed record ({exc})") from None
            if not isinstance(rank, int) or isinstance(rank, bool) or rank < 0:
                raise TaxonomyError(f"{source}:{i}: rank must be a non-negative integer, got {rank!r}")
            if tid in nodes:
                raise TaxonomyError(f"{source}:{i}: duplicate id {tid!r}")
            nodes[tid] = TaxonNode(tid, parent, rank, str(rec.get("name", "")))
            lineno[tid] = i
        if not nodes:
            raise TaxonomyError(f"{source}: empty taxonomy")

        roots = [t for t, n in nodes.items() if n.parent is None]
        if len(roots) != 1:
            where = lineno[roots[1]] if len(roots) > 1 else 1
            raise TaxonomyError(f"{source}:{where}: expected exactly one root, found {len(roots)}")
        children: dict = {t: [] for t in nodes}
        for tid, node in nodes.items():
            if node.parent is None:
                continue
            if node.parent not in nodes:
                raise TaxonomyError(f"{source}:{lineno[tid]}: unknown parent {node.parent!r}")
            if nodes[node.parent].rank != node.rank + 1:
                raise TaxonomyError(
                    f"{source}:{lineno[tid]}: rank {node.rank} under parent of rank "
                    f"{nodes[node.parent].rank}; ranks must step by exactly one")
            children[node.parent].append(tid)

        root = roots[0]
        seen = {root}
        stack = [root]
        while stack:
            for child in children[stack.pop()]:
                seen.add(child)
                stack.append(child)
        if len(seen) != len(nodes):
            orphan = min((t for t in nodes if t not in seen), key=lineno.__getitem__)
            raise TaxonomyError(f"{source}:{lineno[orphan]}: node {orphan!r} unreachable from root (cycle)")

        leaves = frozenset(t for t, c in children.items() if not c)
        for leaf in sorted(leaves, key=lineno.__getitem__):
            if nodes[leaf].rank != 0:
                raise TaxonomyError(
                    f"{source}:{lineno[leaf]}: leaf {leaf!r} has rank {nodes[leaf].rank}; "
                    "non-uniform depth is not supported")
        frozen_children = {t: tuple(c) for t, c in children.items()}
        return cls(dict(nodes), root, leaves, frozen_children)

    @classmethod
    def load(cls, path) -> "Taxonomy":
        path = Path(path)
        records = []
        with path.open() as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise TaxonomyError(f"{path}:{i}: invalid JSON ({exc.msg})") from None
        return cls.from_records(records, source=str(path))

    def to_records(self) -> list[dict]:
        return [{"id": n.id, "parent_id": n.parent, "rank": n.rank, "name": n.name}
                for n in self.nodes.values()]

    @property
    def depth(self) -> int:
        return self.nodes[self.root].rank

    def parent(self, tid: TaxonId) -> TaxonId | None:
        return self.nodes[tid].parent

    def children(self, tid: TaxonId) -> tuple:
        return self._children[tid]

    def leaves_under(self, tid: TaxonId) -> list:
        out, stack = [], [tid]
        while stack:
            node = stack.pop()
            kids = self._children[node]
            if not kids:
                out.append(node)
            stack.extend(reversed(kids))
        return out

    def _check_leaf_level(self, c: TaxonId, level: int) -> None:
        if c not in self.nodes:
            raise KeyError(f"unknown taxon {c!r}")
        if c not in self.leaves:
            raise TaxonomyError(f"taxon {c!r} is not a leaf")
        if not 1 <= level <= self.depth:
            raise IndexError(f"level {level} out of range 1..{self.depth}")

    def ancestor_at(self, c: TaxonId, level: int) -> TaxonId:
        """The node exactly ``level`` ranks above leaf ``c``."""
        self._check_leaf_level(c, level)
        node = c
        for _ in range(level):
            node = self.nodes[node].parent
        return node

    def taxon_partition(self, c: TaxonId, level: int) -> set:
        """Leaves whose lowest common ancestor with ``c`` is exactly ``level`` ranks up."""
        self._check_leaf_level(c, level)
        below = c if level == 1 else self.ancestor_at(c, level - 1)
        out: set = set()
        for child in self._children[self.ancestor_at(c, level)]:
            if child != below:
                out.update(self.leaves_under(child))
        return out

    def lca_level(self, a: TaxonId, b: TaxonId) -> int:
        """Number of ranks above leaf ``a`` at which ``a`` and ``b`` first meet (0 if equal)."""
        up_b = set()
        node = b
        while node is not None:
            up_b.add(node)
            node = self.nodes[node].parent
        node, level = a, 0
        while node not in up_b:
            node = self.nodes[node].parent
            level += 1
        return level
