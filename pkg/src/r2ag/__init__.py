"""Reinforced knowledge-graph path retrieval for discharge-instruction drafting.

The package wires together a flat-file knowledge graph, concept embeddings,
a lexicon-based concept linker, a two-layer policy network trained with
group-relative REINFORCE, a prompt/generation pipeline, and a metric harness.
Everything is deterministic given a seed and runs offline on synthetic data.
"""

__version__ = "0.1.0"

from .kg_store import KnowledgeGraph, load_kg
from .embeddings import EmbeddingTable, load_embeddings, pseudo_embeddings
from .concept_linker import PatientInput, link_concepts, load_corpus
from .gro_trainer import TrainConfig, train

__all__ = [
    "KnowledgeGraph",
    "load_kg",
    "EmbeddingTable",
    "load_embeddings",
    "pseudo_embeddings",
    "PatientInput",
    "link_concepts",
    "load_corpus",
    "TrainConfig",
    "train",
]
