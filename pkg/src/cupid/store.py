"""On-disk corpus format and clip-boundary utilities.

Shard layout (binary, little-endian):

    magic   4 bytes  b"CPDE"
    version u16      currently 1
    dim     u32      embedding dimension (0 only for empty shards)
    count   u32      number of videos
    then per video:
        id_len     u16
        id         UTF-8 bytes
        clip_count u32
        values     clip_count * dim float32, row-major (clip, dim)

A corpus is a JSON-lines manifest, one object per video
{"video_id","shard","offset","clip_count"}, plus the shard files it points
to. Shard paths are stored relative to the manifest. Video metadata and
subtitles live in separate JSON-lines files (see read_metadata /
read_subtitles).

After ingestion a CorpusHandle is immutable; any number of threads may read
from it concurrently. Reads are served from memory-mapped shards.
"""
from __future__ import annotations

import io
import json
import mmap
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .errors import ArgumentError, DataError, FormatError, NotFoundError, SchemaError

SHARD_MAGIC = b"CPDE"
SHARD_VERSION = 1

_HEADER = struct.Struct("<4sHII")
_ID_LEN = struct.Struct("<H")
_CLIP_COUNT = struct.Struct("<I")

SUBTITLE_SOURCES = ("human", "asr", "none")
ROLES = ("source", "target")


@dataclass(frozen=True)
class ClipMatrix:
    """Stack of clip embeddings for one video, row-major (clip, dim) float32."""

    video_id: str
    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise SchemaError(
                f"video {self.video_id!r}: expected a 2-D clip matrix with dim >= 1")
        object.__setattr__(self, "values", arr)
        if arr.shape[0] < 1:
            raise DataError(f"video {self.video_id!r} has zero clips")
        if not np.isfinite(arr).all():
            raise DataError(f"video {self.video_id!r} contains non-finite values")

    @property
    def clip_count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, slots=True)
class ManifestEntry:
    video_id: str
    shard: str
    offset: int
    clip_count: int


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    category: str
    title: str
    subtitle_source: str
    duration_s: float

    def __post_init__(self):
        if self.subtitle_source not in SUBTITLE_SOURCES:
            raise DataError(
                f"video {self.video_id!r}: subtitle_source must be one of {SUBTITLE_SOURCES}"
            )
        if self.duration_s < 0:
            raise DataError(f"video {self.video_id!r}: negative duration")


@dataclass(frozen=True)
class Subtitle:
    text: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.start_s > self.end_s:
            raise DataError(f"subtitle spans negative time range ({self.start_s} > {self.end_s})")


def write_shard(videos: Sequence[ClipMatrix], dim: int | None = None) -> bytes:
    """Serialize videos into one shard. Bit-exact round trip with ingest_shard."""
    if dim is None:
        dim = videos[0].dim if videos else 0
    seen: set[str] = set()
    for v in videos:
        if v.dim != dim:
            raise SchemaError(f"video {v.video_id!r} has dim {v.dim}, shard dim is {dim}")
        if v.video_id in seen:
            raise DataError(f"duplicate video_id {v.video_id!r} in shard")
        seen.add(v.video_id)
    out = io.BytesIO()
    out.write(_HEADER.pack(SHARD_MAGIC, SHARD_VERSION, dim, len(videos)))
    for v in videos:
        id_bytes = v.video_id.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise DataError(f"video id too long ({len(id_bytes)} bytes)")
        out.write(_ID_LEN.pack(len(id_bytes)))
        out.write(id_bytes)
        out.write(_CLIP_COUNT.pack(v.clip_count))
        out.write(v.values.astype("<f4", copy=False).tobytes())
    return out.getvalue()


def _decode_video(buf, offset: int, dim: int, shard_name: str = "") -> tuple[ClipMatrix, int]:
    """Decode one video record at byte offset; returns (video, next offset)."""
    try:
        (id_len,) = _ID_LEN.unpack_from(buf, offset)
        pos = offset + _ID_LEN.size
        id_bytes = bytes(buf[pos:pos + id_len])
        if len(id_bytes) != id_len:
            raise FormatError(f"truncated id at offset {offset} in shard {shard_name!r}")
        video_id = id_bytes.decode("utf-8")
        pos += id_len
        (clip_count,) = _CLIP_COUNT.unpack_from(buf, pos)
        pos += _CLIP_COUNT.size
        n_bytes = clip_count * dim * 4
        if pos + n_bytes > len(buf):
            raise FormatError(
                f"video {video_id!r} overruns shard {shard_name!r} (offset {offset})"
            )
        values = np.frombuffer(buf, dtype="<f4", count=clip_count * dim, offset=pos)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"undecodable record at offset {offset} in shard {shard_name!r}") from exc
    if clip_count == 0:
        raise DataError(f"video {video_id!r} has zero clips")
    matrix = ClipMatrix(video_id, values.reshape(clip_count, dim))
    return matrix, pos + n_bytes


def ingest_shard(stream: BinaryIO | bytes, expected_dim: int,
                 shard_name: str = "") -> list[ManifestEntry]:
    """Validate a shard byte stream and return one manifest entry per video.

    Every record is fully decoded: ids must be unique, clip counts positive,
    values finite. The header dim must equal expected_dim (empty shards have
    dim 0 and match any expectation).
    """
    if expected_dim <= 0:
        raise ArgumentError("expected_dim must be positive")
    data = stream if isinstance(stream, (bytes, bytearray, memoryview)) else stream.read()
    if len(data) < _HEADER.size:
        raise FormatError(f"shard {shard_name!r} shorter than header")
    magic, version, dim, video_count = _HEADER.unpack_from(data, 0)
    if magic != SHARD_MAGIC:
        raise FormatError(f"shard {shard_name!r}: bad magic {magic!r}")
    if version != SHARD_VERSION:
        raise FormatError(f"shard {shard_name!r}: unsupported version {version}")
    if video_count > 0 and dim != expected_dim:
        raise SchemaError(f"shard {shard_name!r} has dim {dim}, expected {expected_dim}")
    entries = []
    seen: set[str] = set()
    offset = _HEADER.size
    for _ in range(video_count):
        video, next_offset = _decode_video(data, offset, dim, shard_name)
        if video.video_id in seen:
            raise DataError(f"duplicate video_id {video.video_id!r} in shard {shard_name!r}")
        seen.add(video.video_id)
        entries.append(ManifestEntry(video.video_id, shard_name, offset, video.clip_count))
        offset = next_offset
    if offset != len(data):
        raise FormatError(f"shard {shard_name!r} has {len(data) - offset} trailing bytes")
    return entries


def read_shard_header(buf) -> tuple[int, int]:
    """Return (dim, video_count) from raw shard bytes."""
    if len(buf) < _HEADER.size:
        raise FormatError("shard shorter than header")
    magic, version, dim, video_count = _HEADER.unpack_from(buf, 0)
    if magic != SHARD_MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}")
    if version != SHARD_VERSION:
        raise FormatError(f"unsupported shard version {version}")
    return dim, video_count


@dataclass
class _Tile:
    """One contiguous run of source or target videos, decoded for scoring."""

    ids: list[str]
    counts: np.ndarray      # intp (n,)
    offsets: np.ndarray     # intp (n+1,) into clips
    clips: np.ndarray       # float32 (total_clips, dim)


class CorpusHandle:
    """Immutable random-access view over the videos of one corpus."""

    def __init__(self, corpus_id: str, role: str, manifest: list[ManifestEntry],
                 dim: int, buffers: dict):
        if role not in ROLES:
            raise ArgumentError(f"role must be one of {ROLES}")
        ids = [e.video_id for e in manifest]
        if len(set(ids)) != len(ids):
            raise DataError(f"corpus {corpus_id!r}: duplicate video ids in manifest")
        self.corpus_id = corpus_id
        self.role = role
        self.manifest = manifest
        self.dim = dim
        self._buffers = buffers
        self._index = {e.video_id: e for e in manifest}

    @property
    def video_count(self) -> int:
        return len(self.manifest)

    def video_ids(self) -> list[str]:
        return [e.video_id for e in self.manifest]

    def load_video(self, video_id: str) -> ClipMatrix:
        entry = self._index.get(video_id)
        if entry is None:
            raise NotFoundError(f"video {video_id!r} not in corpus {self.corpus_id!r}")
        return self._load_entry(entry)

    def _load_entry(self, entry: ManifestEntry) -> ClipMatrix:
        buf = self._buffers.get(entry.shard)
        if buf is None:
            raise NotFoundError(f"shard {entry.shard!r} not attached to corpus")
        video, _ = _decode_video(buf, entry.offset, self.dim, entry.shard)
        if video.video_id != entry.video_id:
            raise FormatError(
                f"offset {entry.offset} in shard {entry.shard!r} decodes to "
                f"{video.video_id!r}, manifest says {entry.video_id!r}"
            )
        if video.clip_count != entry.clip_count:
            raise FormatError(
                f"video {entry.video_id!r}: manifest clip_count {entry.clip_count} "
                f"!= stored {video.clip_count}"
            )
        return video

    def load_tile(self, start: int, stop: int) -> _Tile:
        """Decode manifest rows [start, stop) into stacked clip arrays."""
        entries = self.manifest[start:stop]
        ids = [e.video_id for e in entries]
        counts = np.array([e.clip_count for e in entries], dtype=np.intp)
        offsets = np.zeros(len(entries) + 1, dtype=np.intp)
        np.cumsum(counts, out=offsets[1:])
        clips = np.empty((int(offsets[-1]), self.dim), dtype=np.float32)
        for i, entry in enumerate(entries):
            clips[offsets[i]:offsets[i + 1]] = self._load_entry(entry).values
        return _Tile(ids=ids, counts=counts, offsets=offsets, clips=clips)

    def iter_videos(self) -> Iterator[ClipMatrix]:
        for entry in self.manifest:
            yield self._load_entry(entry)

    @classmethod
    def from_arrays(cls, corpus_id: str, role: str,
                    videos: Sequence[ClipMatrix]) -> "CorpusHandle":
        """Build an in-memory corpus (single anonymous shard) from clip matrices."""
        dim = videos[0].dim if videos else 0
        data = write_shard(list(videos), dim=dim)
        entries = ingest_shard(data, dim if dim else 1, shard_name=":memory:")
        return cls(corpus_id, role, entries, dim, {":memory:": data})

    @classmethod
    def open(cls, manifest_path: str | Path, role: str,
             corpus_id: str | None = None) -> "CorpusHandle":
        """Open a corpus from its JSON-lines manifest; shards are memory-mapped."""
        manifest_path = Path(manifest_path)
        entries = read_manifest(manifest_path)
        base = manifest_path.parent
        buffers: dict[str, mmap.mmap | bytes] = {}
        dim: int | None = None
        for shard_name in sorted({e.shard for e in entries}):
            shard_path = base / shard_name
            if not shard_path.exists():
                raise NotFoundError(f"shard file {shard_path} missing")
            with open(shard_path, "rb") as f:
                buf = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
            shard_dim, _ = read_shard_header(buf)
            if shard_dim != 0:
                if dim is None:
                    dim = shard_dim
                elif dim != shard_dim:
                    raise SchemaError(
                        f"shard {shard_name!r} has dim {shard_dim}, corpus dim is {dim}"
                    )
            buffers[shard_name] = buf
        if dim is None:
            dim = 0
        return cls(corpus_id or manifest_path.stem, role, entries, dim, buffers)


def load_video(corpus: CorpusHandle, video_id: str) -> ClipMatrix:
    return corpus.load_video(video_id)


def build_corpus(videos: Iterable[ClipMatrix], out_dir: str | Path, corpus_id: str,
                 role: str = "source", videos_per_shard: int = 4096) -> CorpusHandle:
    """Write shards plus manifest under out_dir and return an open handle."""
    if videos_per_shard < 1:
        raise ArgumentError("videos_per_shard must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_entries: list[ManifestEntry] = []
    batch: list[ClipMatrix] = []
    shard_idx = 0
    dim: int | None = None

    def flush():
        nonlocal shard_idx, dim
        if not batch:
            return
        if dim is None:
            dim = batch[0].dim
        name = f"{corpus_id}-{shard_idx:05d}.shard"
        data = write_shard(batch, dim=dim)
        with open(out_dir / name, "wb") as f:
            f.write(data)
        all_entries.extend(ingest_shard(data, dim, shard_name=name))
        shard_idx += 1
        batch.clear()

    for video in videos:
        batch.append(video)
        if len(batch) >= videos_per_shard:
            flush()
    flush()
    manifest_path = out_dir / f"{corpus_id}.manifest.jsonl"
    write_manifest(all_entries, manifest_path)
    return CorpusHandle.open(manifest_path, role, corpus_id=corpus_id)


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entries.append(ManifestEntry(obj["video_id"], obj["shard"],
                                             int(obj["offset"]), int(obj["clip_count"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line_no}: bad manifest line") from exc
    return entries


def write_manifest(entries: Sequence[ManifestEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(json.dumps({"video_id": e.video_id, "shard": e.shard,
                                "offset": e.offset, "clip_count": e.clip_count}) + "\n")


def read_metadata(path: str | Path) -> list[VideoMeta]:
    """Read a JSON-lines metadata file; ids must be unique."""
    metas = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                meta = VideoMeta(obj["video_id"], obj["category"], obj["title"],
                                 obj["subtitle_source"], float(obj["duration_s"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line_no}: bad metadata line") from exc
            if meta.video_id in seen:
                raise DataError(f"{path}:{line_no}: duplicate video_id {meta.video_id!r}")
            seen.add(meta.video_id)
            metas.append(meta)
    return metas


def write_metadata(metas: Sequence[VideoMeta], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for m in metas:
            f.write(json.dumps({
                "video_id": m.video_id, "category": m.category, "title": m.title,
                "subtitle_source": m.subtitle_source, "duration_s": m.duration_s,
            }) + "\n")


def read_subtitles(path: str | Path) -> dict[str, list[Subtitle]]:
    """Read JSON-lines subtitles grouped by video, each group sorted by start time."""
    groups: dict[str, list[Subtitle]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sub = Subtitle(obj["text"], float(obj["start_s"]), float(obj["end_s"]))
                groups.setdefault(obj["video_id"], []).append(sub)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line_no}: bad subtitle line") from exc
    for subs in groups.values():
        subs.sort(key=lambda s: s.start_s)
    return groups


def write_subtitles(groups: dict[str, Sequence[Subtitle]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for video_id in groups:
            for s in groups[video_id]:
                f.write(json.dumps({"video_id": video_id, "start_s": s.start_s,
                                    "end_s": s.end_s, "text": s.text}) + "\n")


def make_uniform_windows(duration_s: float, n: int) -> list[tuple[float, float]]:
    """Split [0, duration_s] into n contiguous equal windows.

    Window k starts exactly at k*duration_s/n; the final boundary is pinned to
    duration_s so the windows cover the whole span.
    """
    if n < 1:
        raise ArgumentError("window count must be >= 1")
    if not duration_s > 0:
        raise ArgumentError("duration must be positive")
    bounds = [k * duration_s / n for k in range(n)] + [duration_s]
    return [(bounds[k], bounds[k + 1]) for k in range(n)]


def merge_consecutive_subtitles(subs: Sequence[Subtitle], group: int) -> list[Subtitle]:
    """Merge each run of `group` consecutive subtitles into one.

    Text is joined with single spaces and the merged span runs from the first
    start to the last end of the run; a trailing partial run is kept.
    """
    if group < 1:
        raise ArgumentError("group must be >= 1")
    for a, b in zip(subs, subs[1:]):
        if a.start_s > b.start_s:
            raise ArgumentError("subtitles must be sorted by start time")
    merged = []
    for i in range(0, len(subs), group):
        run = subs[i:i + group]
        merged.append(Subtitle(" ".join(s.text for s in run), run[0].start_s, run[-1].end_s))
    return merged
