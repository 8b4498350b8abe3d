"""In-memory knowledge graph partitioned into semantic groups.

Concepts and directed, labelled relation edges load from two TSV files.
A graph is immutable after load and safe to share across any number of
readers; every derived index iterates in a fixed lexicographic order so
downstream walks are reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import DataFormatError

CONCEPTS_HEADER = "id\tname\tgroup"
RELATIONS_HEADER = "src\trelation\tdst"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def normalize_name(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace.

    Single normalization point shared with the concept linker.
    """
    return " ".join(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class Concept:
    id: str
    name: str
    group: str
    name_norm: str


@dataclass(frozen=True)
class RelationEdge:
    src: str
    label: str
    dst: str


class KnowledgeGraph:
    """Concept map, deduplicated edge list and derived adjacency indexes."""

    def __init__(self, concepts: dict[str, Concept], edges: list[RelationEdge]):
        self.concepts = dict(concepts)
        self.edges = list(edges)

        adjacency: dict[str, list[tuple[str, str]]] = {c: [] for c in self.concepts}
        for e in self.edges:
            adjacency[e.src].append((e.label, e.dst))
        for nbrs in adjacency.values():
            nbrs.sort()
        self.adjacency = adjacency

        members: dict[str, list[str]] = {}
        for cid in sorted(self.concepts):
            members.setdefault(self.concepts[cid].group, []).append(cid)
        self.groups: dict[str, tuple[str, ...]] = {
            g: tuple(ids) for g, ids in sorted(members.items())
        }

        # per-concept neighbors bucketed by the destination's group
        nbr_by_group: dict[str, dict[str, list[tuple[str, str]]]] = {}
        for cid, nbrs in adjacency.items():
            per: dict[str, list[tuple[str, str]]] = {}
            for label, dst in nbrs:
                per.setdefault(self.concepts[dst].group, []).append((label, dst))
            nbr_by_group[cid] = per
        self._nbr_by_group = nbr_by_group

    def __contains__(self, cid: str) -> bool:
        return cid in self.concepts

    def name_of(self, cid: str) -> str:
        return self._concept(cid).name

    def group_of(self, cid: str) -> str:
        return self._concept(cid).group

    def all_groups(self) -> list[str]:
        return list(self.groups)

    def concepts_in_group(self, gid: str) -> set[str]:
        if gid not in self.groups:
            raise KeyError(f"unknown semantic group {gid!r}")
        return set(self.groups[gid])

    def group_members(self, gid: str) -> tuple[str, ...]:
        """Sorted member ids; deterministic counterpart of concepts_in_group."""
        if gid not in self.groups:
            raise KeyError(f"unknown semantic group {gid!r}")
        return self.groups[gid]

    def neighbors_in_group(self, cid: str, gid: str) -> list[tuple[str, str]]:
        """Forward neighbors of ``cid`` inside group ``gid``.

        Returned as (relation label, concept id) pairs in lexicographic
        order.
        """
        self._concept(cid)
        return list(self._nbr_by_group[cid].get(gid, ()))

    def _concept(self, cid: str) -> Concept:
        try:
            return self.concepts[cid]
        except KeyError:
            raise KeyError(f"unknown concept id {cid!r}") from None


def _read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read file: {exc}", path=path) from exc


def load_kg(concepts_path, relations_path) -> KnowledgeGraph:
    """Load a graph from ``concepts.tsv`` and ``relations.tsv``.

    Rejects malformed lines (with line numbers), duplicate concept ids,
    edges whose endpoints are missing, and self-loop edges. Duplicate
    (src, relation, dst) triples are dropped silently.
    """
    lines = _read_lines(concepts_path)
    if not lines or lines[0] != CONCEPTS_HEADER:
        raise DataFormatError(
            "expected header 'id\\tname\\tgroup'", path=concepts_path, line=1
        )
    concepts: dict[str, Concept] = {}
    for no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(parts):
            raise DataFormatError(
                "expected 3 non-empty tab-separated fields", path=concepts_path, line=no
            )
        cid, name, group = parts
        if cid in concepts:
            raise DataFormatError(
                f"duplicate concept id {cid!r}", path=concepts_path, line=no
            )
        concepts[cid] = Concept(cid, name, group, normalize_name(name))
    if not concepts:
        raise DataFormatError("no concepts loaded (empty graph)", path=concepts_path)

    lines = _read_lines(relations_path)
    if not lines or lines[0] != RELATIONS_HEADER:
        raise DataFormatError(
            "expected header 'src\\trelation\\tdst'", path=relations_path, line=1
        )
    edges: list[RelationEdge] = []
    seen: set[tuple[str, str, str]] = set()
    for no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(parts):
            raise DataFormatError(
                "expected 3 non-empty tab-separated fields", path=relations_path, line=no
            )
        src, label, dst = parts
        if src not in concepts:
            raise DataFormatError(
                f"edge references unknown concept {src!r}", path=relations_path, line=no
            )
        if dst not in concepts:
            raise DataFormatError(
                f"edge references unknown concept {dst!r}", path=relations_path, line=no
            )
        if src == dst:
            raise DataFormatError(
                f"self-loop edge on concept {src!r}", path=relations_path, line=no
            )
        triple = (src, label, dst)
        if triple in seen:
            continue
        seen.add(triple)
        edges.append(RelationEdge(src, label, dst))

    kg = KnowledgeGraph(concepts, edges)
    if len(kg.groups) < 2:
        raise DataFormatError(
            "graph must span at least 2 semantic groups", path=concepts_path
        )
    return kg
