"""Seeded generator for desk-scale graphs and patient corpora.

The corpus mirrors the information-gap shape the retriever is meant to
bridge: each patient's keywords concentrate in one dominant group (plus one
keyword in each of a few corpus-wide supplement groups), while the
reference text spreads its concepts across those groups, placed within a
few forward hops of the keywords so a competent retriever can reach them.

Concept names are pronounceable nonsense words, globally unique at the
token level, so every name in a generated text links back unambiguously.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import STOPWORDS
from .kg_store import CONCEPTS_HEADER, RELATIONS_HEADER, KnowledgeGraph

REACH_HOPS = 5

RELATION_LABELS = (
    "associated_with",
    "caused_by",
    "finding_of",
    "located_in",
    "part_of",
    "treated_by",
)

_SYLLABLES = [
    c + v
    for c in "bdfgklmnprstvz"
    for v in "aeiou"
]

# words the text templates use; the name generator must never emit these
_TEMPLATE_WORDS = frozenset(
    """
    allergies chief complaint history present illness patient reports
    episodes prior records mention note noted alongside admitted episode
    acute symptoms testing confirmed treated during stay please monitor
    discharge follow up doctor none recorded
    """.split()
)


@dataclass
class SynthSpec:
    groups: int = 15
    concepts_per_group: int = 50
    p_intra: float = 0.08
    p_cross: float = 0.01
    patients: int = 50
    keywords_per_patient: int = 8
    gt_per_patient: int = 10
    skew: float = 0.9  # fraction of ground-truth concepts outside the dominant group
    seed: int = 0

    def validate(self) -> None:
        if self.groups < 2:
            raise ValueError("need at least 2 groups")
        if self.concepts_per_group < 1:
            raise ValueError("need at least 1 concept per group")
        for name in ("p_intra", "p_cross", "skew"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.patients < 1:
            raise ValueError("need at least 1 patient")
        if self.keywords_per_patient < 1:
            raise ValueError("need at least 1 keyword per patient")
        if self.gt_per_patient < 1:
            raise ValueError("need at least 1 ground-truth concept per patient")


def _new_word(rng: np.random.Generator, used: set[str]) -> str:
    while True:
        n = int(rng.integers(3, 5))
        word = "".join(_SYLLABLES[int(rng.integers(len(_SYLLABLES)))] for _ in range(n))
        if word not in used and word not in STOPWORDS and word not in _TEMPLATE_WORDS:
            used.add(word)
            return word


def gen_kg(spec: SynthSpec, out_dir) -> tuple[Path, Path]:
    """Write concepts.tsv and relations.tsv; deterministic per seed."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([spec.seed, 0])
    used_words: set[str] = set()

    group_names = [_new_word(rng, used_words).capitalize() for _ in range(spec.groups)]
    concept_rows: list[tuple[str, str, str]] = []
    ids: list[str] = []
    group_of: list[int] = []
    for gi, gname in enumerate(group_names):
        for ci in range(spec.concepts_per_group):
            cid = f"C{gi:02d}{ci:03d}"
            if rng.random() < 0.2:
                name = f"{_new_word(rng, used_words)} {_new_word(rng, used_words)}"
            else:
                name = _new_word(rng, used_words)
            concept_rows.append((cid, name, gname))
            ids.append(cid)
            group_of.append(gi)

    n = len(ids)
    gvec = np.array(group_of)
    same = gvec[:, None] == gvec[None, :]
    probs = np.where(same, spec.p_intra, spec.p_cross)
    mask = rng.random((n, n)) < probs
    np.fill_diagonal(mask, False)
    label_idx = rng.integers(0, len(RELATION_LABELS), size=(n, n))

    edges: list[tuple[str, str, str]] = []
    pair_seen: set[tuple[str, str]] = set()
    src_idx, dst_idx = np.nonzero(mask)
    for si, di in zip(src_idx.tolist(), dst_idx.tolist()):
        pair = (ids[si], ids[di])
        pair_seen.add(pair)
        edges.append((ids[si], RELATION_LABELS[label_idx[si, di]], ids[di]))

    # forced spanning tree keeps every group internally connected; pairs the
    # mask already covers need no extra edge
    for gi in range(spec.groups):
        members = [i for i, g in enumerate(group_of) if g == gi]
        for pos in range(1, len(members)):
            parent = members[int(rng.integers(pos))]
            child = members[pos]
            label = RELATION_LABELS[int(rng.integers(len(RELATION_LABELS)))]
            pair = (ids[parent], ids[child])
            if pair not in pair_seen:
                pair_seen.add(pair)
                edges.append((pair[0], label, pair[1]))

    concepts_path = out_dir / "concepts.tsv"
    relations_path = out_dir / "relations.tsv"
    with open(concepts_path, "w", encoding="utf-8") as fh:
        fh.write(CONCEPTS_HEADER + "\n")
        for cid, name, gname in concept_rows:
            fh.write(f"{cid}\t{name}\t{gname}\n")
    with open(relations_path, "w", encoding="utf-8") as fh:
        fh.write(RELATIONS_HEADER + "\n")
        for src, label, dst in edges:
            fh.write(f"{src}\t{label}\t{dst}\n")
    return concepts_path, relations_path


def _bfs(kg: KnowledgeGraph, starts, depth: int) -> set[str]:
    seen = set(starts)
    frontier = set(starts)
    for _ in range(depth):
        nxt: set[str] = set()
        for cid in frontier:
            for _, dst in kg.adjacency[cid]:
                if dst not in seen:
                    seen.add(dst)
                    nxt.add(dst)
        frontier = nxt
        if not frontier:
            break
    return seen


def _sample(rng: np.random.Generator, pool: list[str], k: int) -> list[str]:
    if k >= len(pool):
        return list(pool)
    idx = rng.permutation(len(pool))[:k]
    return [pool[i] for i in idx.tolist()]


def _join_names(names: list[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def _pre_admission_text(kg: KnowledgeGraph, keywords: list[str]) -> str:
    names = [kg.name_of(c) for c in keywords]
    allergy = names[:2]
    chief = names[2:3]
    rest = names[3:] or names[:1]
    sentences = []
    if allergy:
        sentences.append(f"Allergies: {_join_names(allergy)}.")
    if chief:
        sentences.append(f"Chief complaint: {chief[0]}.")
    sentences.append(
        "History of present illness: the patient reports "
        f"{_join_names(rest)} with prior episodes on record."
    )
    return " ".join(sentences)


def _reference_text(kg: KnowledgeGraph, gt: list[str]) -> str:
    names = [kg.name_of(c) for c in gt]
    third = max(1, len(names) // 3)
    confirmed = names[:third]
    treated = names[third : 2 * third]
    monitor = names[2 * third :]
    sentences = ["You were admitted after an episode of acute symptoms."]
    if confirmed:
        sentences.append(f"Testing confirmed {_join_names(confirmed)}.")
    if treated:
        sentences.append(f"We treated {_join_names(treated)} during your stay.")
    if monitor:
        sentences.append(
            f"Please monitor {_join_names(monitor)} after discharge "
            "and follow up with your doctor."
        )
    return " ".join(sentences)


def _keyword_split(k: int, n_groups: int) -> tuple[int, int]:
    """(supplement group count, keywords per supplement) for k keywords.

    The dominant group must keep a strict plurality of keywords.
    """
    n_sup = min(2, n_groups - 1, max(0, k - 2))
    if n_sup == 0:
        return 0, 0
    per_sup = 2 if k - 2 * n_sup >= 3 else 1
    while n_sup > 0 and k - n_sup * per_sup < per_sup + 1:
        n_sup -= 1
    return n_sup, per_sup


def gen_corpus(spec: SynthSpec, kg: KnowledgeGraph, out_path) -> Path:
    """Write the patient JSONL corpus; deterministic per seed.

    Keywords concentrate in a per-patient dominant group, with a couple of
    anchor keywords in each corpus-wide supplement group. Ground-truth
    concepts split skew/1-skew between the supplement groups and the
    dominant group; supplement-side concepts sit preferentially on direct
    out-neighbors of the anchors (and always inside BFS reach of the
    keywords when possible), so a retriever that leaps to the right groups
    can actually collect them.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, 1])
    groups = kg.all_groups()
    if len(groups) != spec.groups:
        raise ValueError(
            f"graph has {len(groups)} groups but the spec declares {spec.groups}"
        )
    n_sup, per_sup = _keyword_split(spec.keywords_per_patient, len(groups))
    sup_idx = sorted(rng.permutation(len(groups))[:n_sup].tolist())
    supplements = [groups[i] for i in sup_idx]

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for i in range(spec.patients):
            dominant = groups[int(rng.integers(len(groups)))]
            dom_members = list(kg.group_members(dominant))
            kw_dom_count = spec.keywords_per_patient - n_sup * per_sup
            keywords = _sample(rng, dom_members, kw_dom_count)
            anchors: dict[str, list[str]] = {}
            for gid in supplements:
                pool = [c for c in kg.group_members(gid) if c not in keywords]
                anchors[gid] = _sample(rng, pool, per_sup)
                keywords.extend(anchors[gid])

            reach = _bfs(kg, keywords, REACH_HOPS)
            taken = set(keywords)
            out_groups = [g for g in supplements if g != dominant]
            out_count = int(round(spec.skew * spec.gt_per_patient)) if out_groups else 0
            in_count = spec.gt_per_patient - out_count

            gt: list[str] = []

            def _take(pools, want):
                got: list[str] = []
                for pool in pools:
                    if len(got) >= want:
                        break
                    fresh = sorted(c for c in pool if c not in taken)
                    picked = _sample(rng, fresh, want - len(got))
                    got.extend(picked)
                    taken.update(picked)
                return got

            near_dom = {c for c in reach if kg.group_of(c) == dominant}
            gt.extend(_take([near_dom, set(dom_members)], in_count))

            for j in range(out_count):
                gid = out_groups[j % len(out_groups)]
                one_hop = {
                    dst
                    for a in anchors.get(gid, ())
                    for _, dst in kg.neighbors_in_group(a, gid)
                }
                near = {c for c in reach if kg.group_of(c) == gid}
                gt.extend(
                    _take([one_hop, near, set(kg.group_members(gid))], 1)
                )

            record = {
                "id": f"P{i:04d}",
                "pre_admission": _pre_admission_text(kg, keywords),
                "reference": _reference_text(kg, gt),
            }
            fh.write(json.dumps(record) + "\n")
    return out_path
