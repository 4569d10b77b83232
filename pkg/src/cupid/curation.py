"""Curation strategies producing pre-training manifests.

Three strategies are provided: ranking sources by their mean similarity to
the whole target corpus (avg_sim), sampling from a pool built out of
per-target nearest neighbours (knn), and metadata rule filtering (heuristic).
Manifests can be chained through overlap exclusion and staged into an
incremental schedule with strictly decreasing capacities.
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ArgumentError, CapacityError, DataError, FormatError
from .similarity import PoolingMode
from .store import VideoMeta

STRATEGIES = ("avg_sim", "knn", "heuristic")


@dataclass(frozen=True)
class CurationConfig:
    capacity_c: int
    strategy: str
    expansion_factor: float = 3.0
    seed: int = 0
    pooling: PoolingMode = PoolingMode.MEAN

    def __post_init__(self):
        if self.capacity_c < 1:
            raise ArgumentError("capacity must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ArgumentError(f"strategy must be one of {STRATEGIES}")
        if self.strategy == "knn" and not 2.0 <= self.expansion_factor <= 4.0:
            raise ArgumentError("expansion_factor must lie in [2, 4]")

    def as_dict(self) -> dict:
        return {
            "capacity_c": self.capacity_c,
            "strategy": self.strategy,
            "expansion_factor": self.expansion_factor,
            "seed": self.seed,
            "pooling": self.pooling.value,
        }


@dataclass(frozen=True, slots=True)
class CurationEntry:
    rank: int
    video_id: str
    score: float | None


@dataclass
class CurationManifest:
    """Ordered curation result: contiguous 1-based ranks, unique ids."""

    strategy: str
    entries: list[CurationEntry]
    config_echo: dict = field(default_factory=dict)
    excluded_count: int = 0

    def __post_init__(self):
        ids = [e.video_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("curation manifest has duplicate video ids")
        for i, e in enumerate(self.entries, 1):
            if e.rank != i:
                raise DataError(f"manifest ranks not contiguous at position {i}")

    def video_ids(self) -> list[str]:
        return [e.video_id for e in self.entries]


def curate_avg_sim(source_ids: Sequence[str], means: np.ndarray, c: int,
                   config: CurationConfig | None = None) -> CurationManifest:
    """Select the c sources with the largest mean similarity.

    Ranked by descending score; equal scores break by ascending source_id.
    Selections are nested in c: the top c1 < c2 picks are a prefix of the
    top c2 picks.
    """
    n = len(source_ids)
    if len(means) != n:
        raise ArgumentError("source_ids and means lengths differ")
    if c < 1:
        raise ArgumentError("capacity must be >= 1")
    if c > n:
        raise CapacityError(f"capacity {c} exceeds source count {n}")
    order = sorted(range(n), key=lambda i: (-float(means[i]), source_ids[i]))
    entries = [CurationEntry(rank, source_ids[i], float(means[i]))
               for rank, i in enumerate(order[:c], 1)]
    echo = config.as_dict() if config else {"capacity_c": c, "strategy": "avg_sim"}
    return CurationManifest("avg_sim", entries, echo)


RowTopkProvider = Callable[[int], list[list[tuple[str, float]]]]


def knn_candidate_pool(row_topk_provider: RowTopkProvider, n_sources: int,
                       pool_target: int) -> tuple[list[tuple[str, float]], int]:
    """Grow per-row k until the union of per-row top-k reaches pool_target ids.

    Returns the pool as (source_id, best score over rows) pairs sorted by
    (score desc, id asc), plus the k that was reached. k stops growing at
    n_sources even if the pool stays smaller than pool_target.
    """
    if n_sources == 0:
        return [], 0
    fetch_k = min(max(8, pool_target), n_sources)
    while True:
        rows = row_topk_provider(fetch_k)
        # Per-row lists are sorted by the same total order for every k, so
        # the top-k rows for any k <= fetch_k are their prefixes.
        k, union = _minimal_k(rows, pool_target)
        if union is not None:
            break
        if fetch_k >= n_sources:
            k = n_sources
            union = _union_at(rows, k)
            break
        fetch_k = min(fetch_k * 4, n_sources)
    pool = sorted(union.items(), key=lambda item: (-item[1], item[0]))
    return pool, k


def _union_at(rows: list[list[tuple[str, float]]], k: int) -> dict[str, float]:
    best: dict[str, float] = {}
    for row in rows:
        for vid, score in row[:k]:
            if vid not in best or score > best[vid]:
                best[vid] = score
    return best


def _minimal_k(rows, pool_target: int):
    """Smallest prefix depth whose id union reaches pool_target, or (depth, None)."""
    best: dict[str, float] = {}
    depth = max((len(r) for r in rows), default=0)
    for k in range(1, depth + 1):
        for row in rows:
            if k <= len(row):
                vid, score = row[k - 1]
                if vid not in best or score > best[vid]:
                    best[vid] = score
        if len(best) >= pool_target:
            return k, best
    return depth, None


def curate_knn(row_topk_provider: RowTopkProvider, n_sources: int, c: int,
               expansion_factor: float = 3.0, seed: int = 0,
               config: CurationConfig | None = None) -> CurationManifest:
    """Sample c sources from a nearest-neighbour pool 2-4x larger than c.

    The pool is the deduplicated union of per-target top-k lists at the
    smallest k reaching round(expansion_factor * c) ids (capped at k = N);
    c entries are then drawn uniformly without replacement with the seeded
    generator. Output is ordered by each id's best per-row score.
    """
    if c < 1:
        raise ArgumentError("capacity must be >= 1")
    if c > n_sources:
        raise CapacityError(f"capacity {c} exceeds source count {n_sources}")
    if not 2.0 <= expansion_factor <= 4.0:
        raise ArgumentError("expansion_factor must lie in [2, 4]")
    pool_target = int(round(expansion_factor * c))
    pool, _ = knn_candidate_pool(row_topk_provider, n_sources, pool_target)
    if len(pool) < c:
        raise CapacityError(
            f"candidate pool has {len(pool)} ids, capacity is {c} "
            "(provider returned fewer rows than expected)")
    rng = np.random.default_rng(seed)
    chosen_idx = rng.permutation(len(pool))[:c]
    chosen = [pool[i] for i in sorted(chosen_idx)]
    chosen.sort(key=lambda item: (-item[1], item[0]))
    entries = [CurationEntry(rank, vid, float(score))
               for rank, (vid, score) in enumerate(chosen, 1)]
    echo = config.as_dict() if config else {
        "capacity_c": c, "strategy": "knn",
        "expansion_factor": expansion_factor, "seed": seed,
    }
    echo = dict(echo, pool_size=len(pool))
    return CurationManifest("knn", entries, echo)


@dataclass(frozen=True)
class HeuristicRules:
    """Metadata predicates: category whitelist, title-vocabulary overlap,
    and optionally human-authored subtitles."""

    allowed_categories: frozenset[str]
    target_vocabulary: frozenset[str]
    require_human_subtitles: bool = False
    cap: int | None = None

    def __post_init__(self):
        if not self.allowed_categories:
            raise ArgumentError("allowed_categories must be non-empty")
        object.__setattr__(self, "allowed_categories", frozenset(self.allowed_categories))
        object.__setattr__(
            self, "target_vocabulary",
            frozenset(w.lower() for w in self.target_vocabulary),
        )
        if self.cap is not None and self.cap < 0:
            raise ArgumentError("cap must be >= 0")

    def as_dict(self) -> dict:
        return {
            "allowed_categories": sorted(self.allowed_categories),
            "target_vocabulary": sorted(self.target_vocabulary),
            "require_human_subtitles": self.require_human_subtitles,
            "cap": self.cap,
        }


_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


def tokenize_title(title: str) -> set[str]:
    """Case-folded whitespace tokens with ASCII punctuation stripped."""
    return set(title.lower().translate(_PUNCT_TABLE).split())


def title_vocabulary(metas: Iterable[VideoMeta]) -> frozenset[str]:
    """Union of title tokens across a metadata set (target-side vocabulary)."""
    vocab: set[str] = set()
    for meta in metas:
        vocab |= tokenize_title(meta.title)
    return frozenset(vocab)


def curate_heuristic(metas: Iterable[VideoMeta], rules: HeuristicRules) -> CurationManifest:
    """Keep videos passing all metadata rules; order by ascending video_id.

    Rules are conjunctive: category must be whitelisted, the lowercase title
    must share at least one token with the target vocabulary, and, when
    required, subtitles must be human-authored. Scores are null. A cap
    truncates by ascending id.
    """
    kept = []
    for meta in metas:
        if meta.category not in rules.allowed_categories:
            continue
        if not (tokenize_title(meta.title) & rules.target_vocabulary):
            continue
        if rules.require_human_subtitles and meta.subtitle_source != "human":
            continue
        kept.append(meta.video_id)
    kept.sort()
    if rules.cap is not None:
        kept = kept[:rules.cap]
    entries = [CurationEntry(rank, vid, None) for rank, vid in enumerate(kept, 1)]
    return CurationManifest("heuristic", entries, rules.as_dict())


def exclude_overlap(manifest: CurationManifest, downstream_ids: set[str]) -> CurationManifest:
    """Drop entries appearing in the downstream id set; ranks are recompacted."""
    kept = [e for e in manifest.entries if e.video_id not in downstream_ids]
    removed = len(manifest.entries) - len(kept)
    entries = [CurationEntry(rank, e.video_id, e.score)
               for rank, e in enumerate(kept, 1)]
    return CurationManifest(manifest.strategy, entries, dict(manifest.config_echo),
                            manifest.excluded_count + removed)


@dataclass(frozen=True)
class ScheduleStage:
    manifest: CurationManifest
    steps: int


@dataclass
class StagedSchedule:
    stages: list[ScheduleStage]

    def total_steps(self) -> int:
        return sum(s.steps for s in self.stages)


def build_incremental_schedule(manifests: Sequence[CurationManifest],
                               total_steps: int) -> StagedSchedule:
    """Distribute training steps uniformly over stages of decreasing size.

    The remainder goes to the earliest stages, so e.g. 100000 steps over
    three stages split as 33334/33333/33333.
    """
    if not manifests:
        raise ArgumentError("at least one manifest required")
    sizes = [len(m.entries) for m in manifests]
    for a, b in zip(sizes, sizes[1:]):
        if b >= a:
            raise ArgumentError(f"stage sizes must be strictly decreasing, got {sizes}")
    if total_steps < len(manifests):
        raise ArgumentError("total_steps must be >= number of stages")
    base, remainder = divmod(total_steps, len(manifests))
    steps = [base + 1 if i < remainder else base for i in range(len(manifests))]
    return StagedSchedule([ScheduleStage(m, s) for m, s in zip(manifests, steps)])


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_curation_manifest(manifest: CurationManifest, path: str | Path) -> None:
    """Write entry rows as JSON-lines plus a .meta.json sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest.entries:
            f.write(json.dumps({"rank": e.rank, "video_id": e.video_id,
                                "score": e.score, "strategy": manifest.strategy}) + "\n")
    sidecar = {
        "strategy": manifest.strategy,
        "config": manifest.config_echo,
        "excluded_count": manifest.excluded_count,
    }
    with open(_sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def read_curation_manifest(path: str | Path) -> CurationManifest:
    path = Path(path)
    entries = []
    strategy = None
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries.append(CurationEntry(int(obj["rank"]), obj["video_id"],
                                             obj["score"]))
                strategy = obj["strategy"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line_no}: bad manifest line") from exc
    sidecar_path = _sidecar_path(path)
    config_echo: dict = {}
    excluded = 0
    if sidecar_path.exists():
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        strategy = sidecar.get("strategy", strategy)
        config_echo = sidecar.get("config", {})
        excluded = sidecar.get("excluded_count", 0)
    if strategy is None:
        raise FormatError(f"{path}: cannot determine strategy (empty manifest, no sidecar)")
    return CurationManifest(strategy, entries, config_echo, excluded)


def write_schedule(schedule: StagedSchedule, manifest_paths: Sequence[str | Path],
                   path: str | Path) -> None:
    """Write the stage table as JSON-lines {"stage","manifest_path","steps"}."""
    if len(manifest_paths) != len(schedule.stages):
        raise ArgumentError("one manifest path required per stage")
    with open(path, "w", encoding="utf-8") as f:
        for i, (stage, mpath) in enumerate(zip(schedule.stages, manifest_paths), 1):
            f.write(json.dumps({"stage": i, "manifest_path": str(mpath),
                                "steps": stage.steps}) + "\n")


def read_schedule(path: str | Path) -> list[tuple[int, str, int]]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rows.append((int(obj["stage"]), obj["manifest_path"], int(obj["steps"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line_no}: bad schedule line") from exc
    return rows
