from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass
class ConcurrencyHistory:
    """Per-interval workflow concurrency by type, plus per-function
    invocation and creation counts.

    ``counts[t][j]`` is the number of workflows of type ``type_ids[j]``
    that arrived in interval ``t``.
    """

    type_ids: tuple[int, ...]
    counts: list[list[int]] = field(default_factory=list)
    invocations: list[Counter] = field(default_factory=list)
    creations: list[Counter] = field(default_factory=list)

    @property
    def S(self) -> int:
        return len(self.type_ids)

    def __len__(self) -> int:
        return len(self.counts)

    def record(
        self,
        concurrency: Mapping[int, int],
        invocations: Mapping[str, int] | None = None,
        creations: Mapping[str, int] | None = None,
    ) -> None:
        row = [int(concurrency.get(s, 0)) for s in self.type_ids]
        if any(c < 0 for c in row):
            raise ValueError("concurrency counts must be >= 0")
        self.counts.append(row)
        self.invocations.append(Counter(invocations or {}))
        self.creations.append(Counter(creations or {}))

    def total(self, t: int = -1) -> int:
        return sum(self.counts[t])

    def last_total_created(self) -> int:
        return sum(self.creations[-1].values()) if self.creations else 0

    def series(self, length: int | None = None) -> np.ndarray:
        """Most recent ``length`` intervals as a (length, S) array,
        left-padded with zeros when the history is shorter."""
        data = np.asarray(self.counts, dtype=float).reshape(len(self.counts), self.S)
        if length is None:
            return data
        if len(data) >= length:
            return data[len(data) - length :]
        pad = np.zeros((length - len(data), self.S))
        return np.vstack([pad, data])

    def invocation_counts(self, window: int) -> Counter:
        total: Counter = Counter()
        for c in self.invocations[-window:]:
            total.update(c)
        return total

    @classmethod
    def from_series(cls, type_ids: Sequence[int], rows: Sequence[Sequence[int]]) -> "ConcurrencyHistory":
        hist = cls(tuple(type_ids))
        for row in rows:
            hist.record(dict(zip(type_ids, row)))
        return hist
