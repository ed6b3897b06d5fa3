"""Label-frequency analysis and the two rebalanced training-set recipes.

Long-tail multi-label corpora concentrate most label instances in a small
head of frequent labels.  This module measures that shape exactly (integer
counting, no sampling) and builds two modified training sets from it:

  * tail subset: only the videos carrying at least one rare label, where
    "rare" means frequency rank above a threshold (rank 0 = most frequent);
  * hard subset: videos with exactly one label or four-plus labels are
    duplicated m times, since those cardinalities dominate evaluation misses.

Ranking ties are broken by ascending label id so every derived artifact is
deterministic.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .featureio import VideoRecord


@dataclass(frozen=True)
class LabelStats:
    counts: np.ndarray  # (L,) occurrences per label id
    order: np.ndarray  # (L,) label ids sorted by descending count, ties by id
    coverage: np.ndarray  # (L,) cumulative fraction covered by top-k labels

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def ranks(self) -> np.ndarray:
        """rank[label] = frequency rank, 0 for the most frequent label."""
        ranks = np.empty_like(self.order)
        ranks[self.order] = np.arange(self.order.size)
        return ranks


def label_frequency_stats(records: Sequence[VideoRecord], vocab_size: int) -> LabelStats:
    """Exact per-label counts and the cumulative coverage curve."""
    if len(records) == 0:
        raise ValueError("empty dataset")
    if vocab_size < 1:
        raise ValueError(f"vocab_size must be >= 1, got {vocab_size}")
    counts = np.zeros(vocab_size, dtype=np.int64)
    for record in records:
        counts[record.labels] += 1
    order = np.lexsort((np.arange(vocab_size), -counts))
    coverage = np.cumsum(counts[order]) / counts.sum()
    return LabelStats(counts=counts, order=order, coverage=coverage)


def build_tail_subset(records: Sequence[VideoRecord], rank_threshold: int,
                      vocab_size: int) -> list[VideoRecord]:
    """Videos having at least one label of frequency rank > rank_threshold."""
    if not 0 <= rank_threshold < vocab_size:
        raise ValueError(
            f"rank_threshold must be in [0, {vocab_size}), got {rank_threshold}"
        )
    ranks = label_frequency_stats(records, vocab_size).ranks
    return [r for r in records if int(ranks[r.labels].max()) > rank_threshold]


def is_hard(record: VideoRecord) -> bool:
    """Cardinality classes that dominate evaluation misses: 1 or >= 4 labels."""
    n = record.labels.size
    return n == 1 or n >= 4


def build_hard_subset(records: Sequence[VideoRecord], multiplier: int = 3) -> list[VideoRecord]:
    """Hard videos appear multiplier times (adjacent), the rest once."""
    if multiplier < 1:
        raise ValueError(f"multiplier must be >= 1, got {multiplier}")
    out: list[VideoRecord] = []
    for record in records:
        out.extend([record] * (multiplier if is_hard(record) else 1))
    return out


def stats_csv(stats: LabelStats) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["rank", "label", "count", "cumulative_coverage"])
    for rank, label in enumerate(stats.order):
        writer.writerow([rank, int(label), int(stats.counts[label]),
                         f"{stats.coverage[rank]:.10g}"])
    return out.getvalue()
