"""Shared fixtures-in-code: synthetic corpora and independent scoring oracles.

The oracles deliberately take the slow path (explicit pairwise dot products
in float64) so they stay independent of the kernel implementations.
"""
import numpy as np

from cupid import ClipMatrix, CorpusHandle, PoolingMode


def random_videos(rng, prefix, n, max_clips, dim):
    videos = []
    for i in range(n):
        clips = int(rng.integers(1, max_clips + 1))
        values = rng.normal(size=(clips, dim)).astype(np.float32)
        videos.append(ClipMatrix(f"{prefix}{i:05d}", values))
    return videos


def random_corpus(rng, corpus_id, role, n, max_clips, dim):
    return CorpusHandle.from_arrays(
        corpus_id, role, random_videos(rng, corpus_id, n, max_clips, dim))


def naive_pair_score(target_video, source_video, pooling):
    """All L x Q clip dots in float64; grand mean or maximum."""
    dots = target_video.values.astype(np.float64) @ source_video.values.astype(np.float64).T
    return float(dots.mean() if pooling is PoolingMode.MEAN else dots.max())


def naive_matrix(target, source, pooling):
    """Dense float64 reference built from per-pair naive scores."""
    targets = list(target.iter_videos())
    sources = list(source.iter_videos())
    out = np.empty((len(targets), len(sources)), dtype=np.float64)
    for j, tv in enumerate(targets):
        for i, sv in enumerate(sources):
            out[j, i] = naive_pair_score(tv, sv, pooling)
    return out


def sort_by_score_then_id(ids, scores):
    """Descending score with ascending-id tie break; returns index order."""
    return sorted(range(len(ids)), key=lambda i: (-float(scores[i]), ids[i]))
