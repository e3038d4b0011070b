"""Next-item scoring: cosine similarity, softmax, fusion, domain combination.

All operations are pure. A candidate set names the domain restriction it
covers plus the catalog indices of its items; distributions over different
candidate sets refuse to fuse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import DomainTag, EmbeddingTable, ItemCatalog


@dataclass(frozen=True)
class CandidateSet:
    """Domain restriction: 'X', 'Y', or 'XY', with the item indices it covers."""

    label: str
    ids: np.ndarray  # int64 catalog indices, ascending

    def __post_init__(self):
        self.ids.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        return (isinstance(other, CandidateSet) and self.label == other.label
                and np.array_equal(self.ids, other.ids))


def candidate_set(catalog: ItemCatalog, label: str) -> CandidateSet:
    if label == "XY":
        ids = np.arange(catalog.num_items, dtype=np.int64)
    elif label in ("X", "Y"):
        ids = catalog.indices(DomainTag[label]).astype(np.int64)
    else:
        raise ValueError(f"unknown candidate set {label!r}")
    return CandidateSet(label=label, ids=ids)


@dataclass
class SimilarityScores:
    values: np.ndarray  # cosine scores, one per candidate, in [-1, 1]
    candidates: CandidateSet


@dataclass
class ProbDist:
    probs: np.ndarray  # non-negative, sums to 1
    candidates: CandidateSet


def cosine_scores(h: np.ndarray, table: EmbeddingTable,
                  candidates: CandidateSet) -> SimilarityScores:
    """Cosine similarity between the sequence state h and each candidate row."""
    h = np.asarray(h, dtype=np.float64)
    hnorm = float(np.linalg.norm(h))
    if hnorm == 0.0:
        raise ValueError("degenerate input: zero-norm sequence state")
    rows = table.values[candidates.ids]
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("degenerate candidate: zero-norm embedding row")
    values = (rows @ h) / (norms * hnorm)
    return SimilarityScores(values=values, candidates=candidates)


def softmax_probs(scores: SimilarityScores, temperature: float = 1.0) -> ProbDist:
    """Temperature softmax over the candidate set, max-subtracted for stability."""
    if not np.isfinite(scores.values).all():
        raise ValueError("scores must be finite")
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    z = scores.values / temperature
    z = z - z.max()
    e = np.exp(z)
    return ProbDist(probs=e / e.sum(), candidates=scores.candidates)


def fuse_modalities(p_id: ProbDist, p_img: ProbDist, alpha: float) -> ProbDist:
    """Convex combination alpha * p_id + (1 - alpha) * p_img."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if p_id.candidates != p_img.candidates:
        raise ValueError("cannot fuse distributions over different candidate sets")
    return ProbDist(probs=alpha * p_id.probs + (1.0 - alpha) * p_img.probs,
                    candidates=p_id.candidates)


def combine_domains(p_x: ProbDist, p_y: ProbDist, p_xy: ProbDist,
                    lambda1: float, lambda2: float, num_items: int) -> np.ndarray:
    """Evaluation-time combination into scores over the full catalog.

    Each distribution contributes only on its own support: X-head mass on X
    items, lambda1-weighted Y-head mass on Y items, lambda2-weighted merged
    head mass everywhere.
    """
    scores = np.zeros(num_items, dtype=np.float64)
    scores[p_x.candidates.ids] += p_x.probs
    scores[p_y.candidates.ids] += lambda1 * p_y.probs
    scores[p_xy.candidates.ids] += lambda2 * p_xy.probs
    return scores


def recommend(scores: np.ndarray, target: DomainTag, catalog: ItemCatalog) -> int:
    """Highest-scoring item within the target domain; ties pick the lowest index."""
    ids = catalog.indices(target)
    if len(ids) == 0:
        raise ValueError(f"target domain {target.name} is empty")
    return int(ids[np.argmax(scores[ids])])
