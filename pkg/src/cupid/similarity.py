"""Clip-level video-pair similarity and the target x source score kernel.

The pair score under mean pooling is the grand mean of all L x Q pairwise
clip dot products; under max pooling it is their maximum. The mean is
evaluated through per-video clip sums (the mean of all pairwise dots equals
dot(sum of target clips, sum of source clips) / (L*Q)), which makes a pair
cost O(dim) instead of O(L*Q*dim).

Determinism contract
--------------------
Accumulation is 64-bit with a fixed index order, so a pair's score depends
only on the two videos involved. Scores are then rounded once to float32;
every consumer (dense matrix, column means, per-row top-k) sees those same
float32 values, and ordered reductions over them are performed in target
index order. Consequently dense and streaming paths agree bit-for-bit and
results are independent of tile geometry and worker count.
"""
from __future__ import annotations

import enum
import heapq
import json
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ArgumentError, CapacityError, FormatError, SchemaError
from .store import ClipMatrix, CorpusHandle

MATRIX_MAGIC = b"CPDK"
MATRIX_VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sHII")


class PoolingMode(enum.Enum):
    MEAN = "mean"
    MAX = "max"

    @classmethod
    def parse(cls, name: str) -> "PoolingMode":
        try:
            return cls(name.lower())
        except ValueError:
            raise ArgumentError(f"unknown pooling mode {name!r} (expected mean or max)") from None


@dataclass(frozen=True)
class TileConfig:
    """Tiling, threading, and memory limits for kernel evaluation.

    Tile geometry and thread count never change results, only peak memory and
    wall time. max_dense_bytes caps build_similarity_matrix allocations.
    """

    tile_rows: int | None = None
    tile_cols: int = 4096
    threads: int = 1
    max_dense_bytes: int = 2 * 1024 ** 3

    def __post_init__(self):
        if self.tile_rows is not None and self.tile_rows < 1:
            raise ArgumentError("tile_rows must be >= 1")
        if self.tile_cols < 1:
            raise ArgumentError("tile_cols must be >= 1")
        if self.threads < 1:
            raise ArgumentError("threads must be >= 1")


DEFAULT_TILE = TileConfig()


@dataclass
class SimilarityView:
    """Materialized target x source score matrix (float32, row-major)."""

    target_ids: list[str]
    source_ids: list[str]
    matrix: np.ndarray


def _clip_sums(values32: np.ndarray) -> np.ndarray:
    """Sum clips of one video in clip order, accumulating in float64."""
    acc = np.zeros(values32.shape[1], dtype=np.float64)
    for row in values32:
        acc += row
    return acc


def _segment_clip_sums(clips32: np.ndarray, offsets: np.ndarray,
                       counts: np.ndarray) -> np.ndarray:
    """Per-video clip sums over a stacked tile.

    Vectorized over videos but sequential over clip index, so each video's
    sum is bit-identical to _clip_sums on that video alone.
    """
    n = len(counts)
    acc = np.zeros((n, clips32.shape[1]), dtype=np.float64)
    if n == 0 or len(clips32) == 0:
        return acc
    starts = offsets[:-1]
    for k in range(int(counts.max())):
        sel = np.nonzero(counts > k)[0]
        acc[sel] += clips32[starts[sel] + k]
    return acc


@dataclass
class _SidePrep:
    """Kernel-ready arrays for one side of the score computation."""

    ids: list[str]
    counts: np.ndarray              # intp (n,)
    sums: np.ndarray | None         # float64 (n, d), mean pooling
    clips: np.ndarray | None        # float64 (total_clips, d), max pooling
    offsets: np.ndarray | None      # intp (n+1,), max pooling

    def row_args(self, r0: int, r1: int) -> tuple:
        if self.sums is not None:
            return self.sums[r0:r1], self.counts[r0:r1]
        lo, hi = int(self.offsets[r0]), int(self.offsets[r1])
        return (np.ascontiguousarray(self.clips[lo:hi]),
                np.ascontiguousarray(self.offsets[r0:r1 + 1] - lo))


def _prepare_side(tile, pooling: PoolingMode) -> _SidePrep:
    if pooling is PoolingMode.MEAN:
        sums = _segment_clip_sums(tile.clips, tile.offsets, tile.counts)
        return _SidePrep(tile.ids, tile.counts, sums, None, None)
    return _SidePrep(tile.ids, tile.counts, None,
                     tile.clips.astype(np.float64), tile.offsets)


def _score_block(target_prep: _SidePrep, r0: int, r1: int,
                 source_prep: _SidePrep, pooling: PoolingMode) -> np.ndarray:
    backend = kernels.active()
    if pooling is PoolingMode.MEAN:
        t_sums, t_counts = target_prep.row_args(r0, r1)
        return backend.mean_score_block(t_sums, t_counts,
                                        source_prep.sums, source_prep.counts)
    t_clips, t_offsets = target_prep.row_args(r0, r1)
    return backend.max_score_block(t_clips, t_offsets,
                                   source_prep.clips, source_prep.offsets)


def _check_dims(target: CorpusHandle, source: CorpusHandle) -> None:
    if target.video_count and source.video_count and target.dim != source.dim:
        raise SchemaError(
            f"target dim {target.dim} != source dim {source.dim}"
        )


def _row_chunks(total: int, tile_rows: int | None):
    step = tile_rows if tile_rows else max(total, 1)
    for r0 in range(0, total, step):
        yield r0, min(r0 + step, total)


def _run_source_tiles(source: CorpusHandle, tile: TileConfig,
                      work: Callable[[int, int], None]) -> None:
    """Apply work(lo, hi) to every source tile, optionally on a thread pool."""
    spans = [(lo, min(lo + tile.tile_cols, source.video_count))
             for lo in range(0, source.video_count, tile.tile_cols)]
    if tile.threads <= 1 or len(spans) <= 1:
        for lo, hi in spans:
            work(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=tile.threads) as pool:
        futures = [pool.submit(work, lo, hi) for lo, hi in spans]
        for fut in futures:
            fut.result()


def pair_similarity(target: ClipMatrix, source: ClipMatrix,
                    pooling: PoolingMode = PoolingMode.MEAN) -> float:
    """Score one target/source video pair (float64).

    Mean pooling averages all L x Q clip dot products; max pooling takes
    their maximum. Symmetric under mean pooling: swapping the arguments
    reproduces the exact same float.
    """
    if target.dim != source.dim:
        raise SchemaError(f"target dim {target.dim} != source dim {source.dim}")
    backend = kernels.active()
    if pooling is PoolingMode.MEAN:
        block = backend.mean_score_block(
            _clip_sums(target.values)[None, :],
            np.array([target.clip_count], dtype=np.intp),
            _clip_sums(source.values)[None, :],
            np.array([source.clip_count], dtype=np.intp),
        )
    else:
        block = backend.max_score_block(
            target.values.astype(np.float64),
            np.array([0, target.clip_count], dtype=np.intp),
            source.values.astype(np.float64),
            np.array([0, source.clip_count], dtype=np.intp),
        )
    return float(block[0, 0])


def build_similarity_matrix(target: CorpusHandle, source: CorpusHandle,
                            pooling: PoolingMode = PoolingMode.MEAN,
                            tile: TileConfig = DEFAULT_TILE) -> SimilarityView:
    """Materialize the full P x N float32 score matrix."""
    _check_dims(target, source)
    p, n = target.video_count, source.video_count
    if p * n * 4 > tile.max_dense_bytes:
        raise CapacityError(
            f"dense matrix needs {p * n * 4} bytes (> {tile.max_dense_bytes}); "
            "use the streaming reducers instead"
        )
    matrix = np.empty((p, n), dtype=np.float32)
    target_prep = _prepare_side(target.load_tile(0, p), pooling)

    def work(lo: int, hi: int) -> None:
        source_prep = _prepare_side(source.load_tile(lo, hi), pooling)
        for r0, r1 in _row_chunks(p, tile.tile_rows):
            block = _score_block(target_prep, r0, r1, source_prep, pooling)
            matrix[r0:r1, lo:hi] = block.astype(np.float32)

    _run_source_tiles(source, tile, work)
    return SimilarityView(target.video_ids(), source.video_ids(), matrix)


def stream_column_means(target: CorpusHandle, source: CorpusHandle,
                        pooling: PoolingMode = PoolingMode.MEAN,
                        tile: TileConfig = DEFAULT_TILE
                        ) -> tuple[list[str], np.ndarray]:
    """Per-source mean score against the whole target corpus, without
    materializing the matrix.

    Returns (source_ids, float64 vector); entry i is the float64 sum of the
    float32 scores of column i in target index order, divided by P. Equals
    column_means_from_matrix of the dense path bit-for-bit.
    """
    _check_dims(target, source)
    p = target.video_count
    if p == 0:
        raise ArgumentError("target corpus is empty")
    target_prep = _prepare_side(target.load_tile(0, p), pooling)
    means = np.zeros(source.video_count, dtype=np.float64)

    def work(lo: int, hi: int) -> None:
        source_prep = _prepare_side(source.load_tile(lo, hi), pooling)
        acc = np.zeros(hi - lo, dtype=np.float64)
        for r0, r1 in _row_chunks(p, tile.tile_rows):
            block32 = _score_block(target_prep, r0, r1, source_prep, pooling).astype(np.float32)
            for row in block32:
                acc += row
        means[lo:hi] = acc / p

    _run_source_tiles(source, tile, work)
    return source.video_ids(), means


class _WorstId:
    """Inverts string order so the bounded heap evicts larger ids on ties."""

    __slots__ = ("s",)

    def __init__(self, s: str):
        self.s = s

    def __lt__(self, other) -> bool:
        return self.s > other.s

    def __eq__(self, other) -> bool:
        return self.s == other.s


class _TopKHeap:
    """Bounded heap keeping the k best (score desc, source_id asc) entries.

    The kept set is a pure function of the pushed multiset, so push order
    (hence tile geometry and thread interleaving) cannot change the result.
    """

    __slots__ = ("k", "_heap")

    def __init__(self, k: int):
        self.k = k
        self._heap: list = []

    def push(self, score: float, source_id: str) -> None:
        item = (score, _WorstId(source_id))
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, item)
        elif self._heap[0] < item:
            heapq.heapreplace(self._heap, item)

    def push_row(self, scores32: np.ndarray, ids: Sequence[str]) -> None:
        if len(self._heap) >= self.k:
            # Only entries at or above the current worst kept score can
            # enter ( >= : an equal score with a smaller id still wins).
            candidates = np.nonzero(scores32 >= np.float32(self._heap[0][0]))[0]
        else:
            candidates = range(len(ids))
        for i in candidates:
            self.push(float(scores32[i]), ids[i])

    def result(self) -> list[tuple[str, float]]:
        entries = [(wid.s, score) for score, wid in self._heap]
        entries.sort(key=lambda e: (-e[1], e[0]))
        return entries


def stream_row_topk(target: CorpusHandle, source: CorpusHandle,
                    pooling: PoolingMode, k: int,
                    tile: TileConfig = DEFAULT_TILE
                    ) -> list[list[tuple[str, float]]]:
    """Top-k scoring sources per target row, never materializing the matrix.

    Each row holds min(k, N) (source_id, score) pairs sorted by descending
    score, ties broken by ascending source_id.
    """
    if k < 1:
        raise ArgumentError("k must be >= 1")
    _check_dims(target, source)
    p = target.video_count
    k = min(k, source.video_count)
    target_prep = _prepare_side(target.load_tile(0, p), pooling)
    heaps = [_TopKHeap(k) for _ in range(p)]
    lock = threading.Lock()

    def work(lo: int, hi: int) -> None:
        source_prep = _prepare_side(source.load_tile(lo, hi), pooling)
        for r0, r1 in _row_chunks(p, tile.tile_rows):
            block32 = _score_block(target_prep, r0, r1, source_prep, pooling).astype(np.float32)
            with lock:
                for j in range(r0, r1):
                    heaps[j].push_row(block32[j - r0], source_prep.ids)

    _run_source_tiles(source, tile, work)
    return [heap.result() for heap in heaps]


def column_means_from_matrix(view: SimilarityView) -> tuple[list[str], np.ndarray]:
    """Column means derived from a dense view, same reduction order as streaming."""
    p = view.matrix.shape[0]
    if p == 0:
        raise ArgumentError("matrix has no target rows")
    acc = np.zeros(view.matrix.shape[1], dtype=np.float64)
    for row in view.matrix:
        acc += row
    return list(view.source_ids), acc / p


def row_topk_from_matrix(view: SimilarityView, k: int) -> list[list[tuple[str, float]]]:
    """Per-row top-k derived from a dense view, same selection as streaming."""
    if k < 1:
        raise ArgumentError("k must be >= 1")
    k = min(k, view.matrix.shape[1])
    rows = []
    for row in view.matrix:
        heap = _TopKHeap(k)
        heap.push_row(row, view.source_ids)
        rows.append(heap.result())
    return rows


def matrix_topk_provider(view: SimilarityView) -> Callable[[int], list[list[tuple[str, float]]]]:
    """Adapter making a dense view usable as a curate_knn row-top-k provider."""
    return lambda k: row_topk_from_matrix(view, k)


def streaming_topk_provider(target: CorpusHandle, source: CorpusHandle,
                            pooling: PoolingMode,
                            tile: TileConfig = DEFAULT_TILE
                            ) -> Callable[[int], list[list[tuple[str, float]]]]:
    return lambda k: stream_row_topk(target, source, pooling, k, tile)


def save_matrix(view: SimilarityView, path: str | Path) -> None:
    """Dump a dense view: CPDK header then P x N float32 row-major."""
    p, n = view.matrix.shape
    with open(path, "wb") as f:
        f.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, p, n))
        f.write(view.matrix.astype("<f4", copy=False).tobytes())


def load_matrix(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _MATRIX_HEADER.size:
        raise FormatError(f"{path}: shorter than header")
    magic, version, p, n = _MATRIX_HEADER.unpack_from(data, 0)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MATRIX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _MATRIX_HEADER.size + p * n * 4
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", count=p * n, offset=_MATRIX_HEADER.size)
    return values.reshape(p, n).copy()


def write_column_means(source_ids: Sequence[str], means: np.ndarray,
                       path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for vid, mean in zip(source_ids, means):
            f.write(json.dumps({"source_id": vid, "avg_sim": float(mean)}) + "\n")


def read_column_means(path: str | Path) -> tuple[list[str], np.ndarray]:
    ids, means = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                ids.append(obj["source_id"])
                means.append(float(obj["avg_sim"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line_no}: bad column-mean line") from exc
    return ids, np.array(means, dtype=np.float64)
