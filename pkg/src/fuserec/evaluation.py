"""Ranking metrics and the evaluation pipeline.

One evaluation case per held-out sequence: the last target-domain item is
the prediction target, everything before it (merged order) is the prefix.
Metrics rank the target over the full target-domain catalog; no sampled
negatives. Ties rank pessimistically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import DomainTag, ItemCatalog
from .model import CrossDomainModel
from .seqdata import DatasetSplit, UserSequence


@dataclass
class EvalReport:
    target_domain: str
    mrr: float
    ndcg5: float
    ndcg10: float
    num_cases: int

    CSV_COLUMNS = ("target_domain", "num_cases", "mrr", "ndcg5", "ndcg10")

    def csv_row(self) -> list[str]:
        return [self.target_domain, str(self.num_cases),
                f"{self.mrr:.12g}", f"{self.ndcg5:.12g}", f"{self.ndcg10:.12g}"]

    def table(self) -> str:
        return (f"target={self.target_domain} cases={self.num_cases} "
                f"MRR={self.mrr:.4f} NDCG@5={self.ndcg5:.4f} NDCG@10={self.ndcg10:.4f}")


def rank_of_target(scores: np.ndarray, target: int, target_ids: np.ndarray) -> int:
    """1-based rank of the target among target-domain items; ties rank lower.

    An item tied with the target counts as ranked above it, so reported
    metrics are lower bounds under ties.
    """
    if target not in target_ids:
        raise ValueError(f"target item {target} not in the target domain")
    s = scores[target_ids]
    st = scores[target]
    higher = int((s > st).sum())
    ties = int((s == st).sum()) - 1
    return 1 + higher + ties


def mrr(ranks) -> float:
    """Mean reciprocal rank."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("mrr of an empty rank list")
    return float(np.mean(1.0 / ranks))


def ndcg_at_k(ranks, k: int) -> float:
    """Mean of 1/log2(rank+1) for ranks within the cutoff, else 0.

    Single relevant item per case, so the ideal DCG is 1.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("ndcg of an empty rank list")
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


def eval_cases(sequences: list[UserSequence], target: DomainTag
               ) -> list[tuple[np.ndarray, int]]:
    """(prefix items, target item) per sequence; the last target-domain item
    is the target. Sequences without a target-domain item or with an empty
    prefix contribute no case."""
    cases = []
    for seq in sequences:
        view_pos = seq.x_view if target == DomainTag.X else seq.y_view
        if len(view_pos) == 0:
            continue
        cut = int(view_pos[-1])
        if cut == 0:
            continue
        cases.append((seq.items[:cut], int(seq.items[cut])))
    return cases


def evaluate(model: CrossDomainModel, sequences: list[UserSequence],
             target_domain: str, lambda1: float | None = None,
             lambda2: float | None = None) -> EvalReport:
    """Score every held-out case and aggregate MRR / NDCG@5 / NDCG@10."""
    target = DomainTag[target_domain]
    cases = eval_cases(sequences, target)
    if not cases:
        raise ValueError("no eligible evaluation cases in the split")
    target_ids = model.catalog.indices(target)
    ranks = []
    for prefix, target_item in cases:
        scores = model.score_prefix(prefix, lambda1=lambda1, lambda2=lambda2)
        ranks.append(rank_of_target(scores, target_item, target_ids))
    return EvalReport(target_domain=target_domain, mrr=mrr(ranks),
                      ndcg5=ndcg_at_k(ranks, 5), ndcg10=ndcg_at_k(ranks, 10),
                      num_cases=len(ranks))


ABLATION_VARIANTS = (
    ("baseline", False, False),
    ("image_fusion", True, False),
    ("full", True, True),
)


@dataclass
class AblationCell:
    name: str
    image_fusion: bool
    multiple_attention: bool
    report: EvalReport


@dataclass
class AblationGrid:
    cells: list[AblationCell]

    CSV_COLUMNS = ("variant", "image_fusion", "multiple_attention",
                   "target_domain", "num_cases", "mrr", "ndcg5", "ndcg10")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_COLUMNS)
            for c in self.cells:
                writer.writerow([c.name, int(c.image_fusion), int(c.multiple_attention),
                                 *c.report.csv_row()])

    def table(self) -> str:
        lines = ["variant        image  multi  MRR      NDCG@5   NDCG@10"]
        for c in self.cells:
            lines.append(f"{c.name:<14s} {int(c.image_fusion):<6d} "
                         f"{int(c.multiple_attention):<6d} {c.report.mrr:<8.4f} "
                         f"{c.report.ndcg5:<8.4f} {c.report.ndcg10:.4f}")
        return "\n".join(lines)


def run_ablation(config, split: DatasetSplit, catalog: ItemCatalog, img_table,
                 eval_split: str = "test") -> AblationGrid:
    """Train and evaluate the three framework variants with a shared seed.

    baseline: single merged-sequence encoder, ID embeddings only;
    image_fusion: adds the frozen-image head to the same single encoder;
    full: per-domain and merged encoders with the weighted combination.
    """
    from dataclasses import replace

    from .training import fit

    cells: list[AblationCell] = []
    eval_seqs = getattr(split, eval_split)
    for name, image_fusion, multiple_attention in ABLATION_VARIANTS:
        cfg = replace(config,
                      use_image=image_fusion,
                      views=("X", "Y", "XY") if multiple_attention else ("XY",))
        result = fit(cfg, split, catalog, img_table if image_fusion else None)
        result.model.restore(result.best_state)
        report = evaluate(result.model, eval_seqs, config.target_domain)
        cells.append(AblationCell(name=name, image_fusion=image_fusion,
                                  multiple_attention=multiple_attention, report=report))
    return AblationGrid(cells=cells)


def write_eval_csv(path: str | Path, report: EvalReport, split_name: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("split",) + EvalReport.CSV_COLUMNS)
        writer.writerow([split_name, *report.csv_row()])
