#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Builds a synthetic source/target corpus pair, then times the streaming
column-mean and row-top-k reducers under each importable backend. Results
are cross-checked: column means must agree within 1e-10 relative and the
top-k id lists must be identical.

Usage:
    python benchmarks/bench_kernels.py [--sources 20000] [--targets 50]
                                       [--dim 64] [--max-clips 4] [--threads 4]
"""
import argparse
import time

import numpy as np

import cupid.kernels as kernels
from cupid import ClipMatrix, CorpusHandle, PoolingMode, TileConfig
from cupid.similarity import stream_column_means, stream_row_topk


def build_corpora(args):
    rng = np.random.default_rng(42)
    sources = []
    for i in range(args.sources):
        clips = int(rng.integers(1, args.max_clips + 1))
        sources.append(ClipMatrix(f"s{i:06d}",
                                  rng.normal(size=(clips, args.dim)).astype(np.float32)))
    targets = [ClipMatrix(f"t{j:03d}",
                          rng.normal(size=(args.max_clips, args.dim)).astype(np.float32))
               for j in range(args.targets)]
    return (CorpusHandle.from_arrays("bench-t", "target", targets),
            CorpusHandle.from_arrays("bench-s", "source", sources))


def run(target, source, pooling, tile):
    t0 = time.perf_counter()
    _, means = stream_column_means(target, source, pooling, tile)
    t_means = time.perf_counter() - t0
    t0 = time.perf_counter()
    topk = stream_row_topk(target, source, pooling, 10, tile)
    t_topk = time.perf_counter() - t0
    return means, topk, t_means, t_topk


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sources", type=int, default=20000)
    parser.add_argument("--targets", type=int, default=50)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--max-clips", type=int, default=4)
    parser.add_argument("--threads", type=int, default=4)
    parser.add_argument("--tile-cols", type=int, default=4096)
    parser.add_argument("--skip-max-pooling", action="store_true",
                        help="max pooling is slow on the numpy fallback")
    args = parser.parse_args()

    target, source = build_corpora(args)
    tile = TileConfig(tile_cols=args.tile_cols, threads=args.threads)
    backends = sorted(kernels.available_backends())
    poolings = [PoolingMode.MEAN] if args.skip_max_pooling else \
        [PoolingMode.MEAN, PoolingMode.MAX]

    print(f"corpus: {source.video_count} sources x {target.video_count} targets, "
          f"dim {args.dim}, <= {args.max_clips} clips/video, "
          f"{args.threads} threads, tile {args.tile_cols}")
    print(f"{'pooling':<8} {'backend':<10} {'col-means':>12} {'row-top-10':>12}")

    for pooling in poolings:
        results = {}
        for name in backends:
            with kernels.use_backend(name):
                means, topk, t_means, t_topk = run(target, source, pooling, tile)
            results[name] = (means, topk)
            print(f"{pooling.value:<8} {name:<10} {t_means:>10.3f}s {t_topk:>10.3f}s")
        if len(results) == 2:
            a, b = (results[name] for name in backends)
            rel = np.abs(a[0] - b[0]) / np.maximum(np.abs(b[0]), 1e-30)
            assert rel.max() < 1e-10, f"column means diverge: {rel.max():.3e}"
            ids_a = [[vid for vid, _ in row] for row in a[1]]
            ids_b = [[vid for vid, _ in row] for row in b[1]]
            assert ids_a == ids_b, "top-k id lists diverge"
            print(f"{pooling.value:<8} backends agree "
                  f"(max col-mean rel diff {rel.max():.2e}, top-k ids identical)")


if __name__ == "__main__":
    main()
