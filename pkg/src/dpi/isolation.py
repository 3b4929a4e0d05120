"""Core-region overlap, threshold grouping, stage order and frozen sets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .param_core import CoreRegion


def jaccard(ci: CoreRegion, cj: CoreRegion) -> float:
    """``|Ci & Cj| / |Ci | Cj|`` on sorted index arrays."""
    if ci.dim != cj.dim:
        raise DimensionError(f"regions over different dims ({ci.dim} vs {cj.dim})")
    if len(ci) == 0 and len(cj) == 0:
        raise ValueError("jaccard is undefined for two empty regions")
    inter = np.intersect1d(ci.indices, cj.indices, assume_unique=True).size
    return inter / (len(ci) + len(cj) - inter)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    values: np.ndarray
    task_ids: tuple[str, ...]

    def __getitem__(self, pair):
        i, j = pair
        return self.values[self.task_ids.index(i), self.task_ids.index(j)]

    def to_dict(self) -> dict:
        return {"task_ids": list(self.task_ids), "values": self.values.tolist()}


def similarity_matrix(regions: Sequence[CoreRegion]) -> SimilarityMatrix:
    if len(regions) < 1:
        raise ValueError("need at least one region")
    dims = {r.dim for r in regions}
    if len(dims) != 1:
        raise DimensionError(f"regions over mixed dims {sorted(dims)}")
    n = len(regions)
    S = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            S[i, j] = S[j, i] = jaccard(regions[i], regions[j])
    return SimilarityMatrix(S, tuple(r.task_id for r in regions))


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path compression and union by rank."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def components(self) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for x in range(len(self.parent)):
            groups.setdefault(self.find(x), []).append(x)
        return sorted(groups.values(), key=lambda g: g[0])


def _check_tau(tau: float) -> None:
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau!r}", field="tau")


def build_grouping(S: SimilarityMatrix, tau: float) -> list[tuple[str, ...]]:
    """Connected components of the graph with edges where ``S >= tau``.

    Components (and members inside them) follow the order of ``S.task_ids``.
    """
    _check_tau(tau)
    n = len(S.task_ids)
    uf = UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            if S.values[i, j] >= tau:
                uf.union(i, j)
    return [tuple(S.task_ids[i] for i in comp) for comp in uf.components()]


@dataclass
class GroupingPlan:
    stages: list[tuple[str, ...]]
    tau: float
    regions: dict[str, CoreRegion]
    p: float | None = None
    similarity: SimilarityMatrix | None = None
    region_files: dict[str, str] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.stages)

    def stage_of(self, task_id: str) -> int:
        """1-based stage index in which ``task_id`` trains."""
        for k, stage in enumerate(self.stages, start=1):
            if task_id in stage:
                return k
        raise KeyError(task_id)

    def check_invariants(self) -> None:
        """Re-verify partition, within-stage connectivity and cross-stage separation."""
        flat = [t for st in self.stages for t in st]
        if len(flat) != len(set(flat)) or set(flat) != set(self.regions):
            raise AssertionError("stages do not partition the task set")
        if self.similarity is None:
            return
        ids = self.similarity.task_ids
        S = self.similarity.values
        stage_of = {t: k for k, st in enumerate(self.stages) for t in st}
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                if stage_of[ids[i]] != stage_of[ids[j]] and S[i, j] >= self.tau:
                    raise AssertionError(f"edge {ids[i]}-{ids[j]} crosses stages")
        for st in self.stages:
            pos = [ids.index(t) for t in st]
            uf = UnionFind(len(pos))
            for a in range(len(pos)):
                for b in range(a + 1, len(pos)):
                    if S[pos[a], pos[b]] >= self.tau:
                        uf.union(a, b)
            if len(uf.components()) != 1:
                raise AssertionError(f"stage {st} is not connected at tau={self.tau}")

    def to_dict(self) -> dict:
        return {
            "stages": [list(s) for s in self.stages],
            "tau": self.tau,
            "p": self.p,
            "regions": {tid: self.region_files.get(tid) for tid in self.regions},
            "region_sizes": {tid: len(r) for tid, r in self.regions.items()},
            "similarity": None if self.similarity is None else self.similarity.to_dict(),
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _union_size(group, regions) -> int:
    idx = [regions[t].indices for t in group]
    return int(np.unique(np.concatenate(idx)).size) if idx else 0


def order_stages(
    groups: Sequence[Sequence[str]],
    regions: dict[str, CoreRegion],
    tau: float = 0.0,
    task_order: Sequence[str] | None = None,
    similarity: SimilarityMatrix | None = None,
    p: float | None = None,
) -> GroupingPlan:
    """Largest core-region footprint trains first; ties by earliest member.

    "Earliest" follows ``task_order`` when given, else plain string order.
    """
    rank = {t: i for i, t in enumerate(task_order)} if task_order is not None else None

    def first(group):
        return min(rank[t] for t in group) if rank is not None else min(group)

    stages = sorted((tuple(g) for g in groups), key=lambda g: (-_union_size(g, regions), first(g)))
    return GroupingPlan(stages, tau, dict(regions), p=p, similarity=similarity)


@dataclass(frozen=True)
class FrozenSet:
    indices: np.ndarray
    stage_index: int

    def __len__(self):
        return int(self.indices.size)


def frozen_set(plan: GroupingPlan, k: int) -> FrozenSet:
    """Union of the core regions of every task trained before stage ``k`` (1-based).

    ``k = K + 1`` is accepted and gives the set protected after the last stage.
    """
    if not 1 <= k <= plan.K + 1:
        raise IndexError(f"stage index {k} outside 1..{plan.K + 1}")
    parts = [plan.regions[t].indices for stage in plan.stages[: k - 1] for t in stage]
    idx = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    return FrozenSet(idx.astype(np.int64), k)
