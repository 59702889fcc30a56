"""Dataset ingestion, length normalization, labels, synthetic data.

On-disk layout: one directory per dataset, two binary files per video
(little-endian throughout):

  <video_id>.hrnf   magic b"HRNF", uint32 id length, id bytes (UTF-8),
                    uint32 T, uint32 d, then T*d float32 row-major
  <video_id>.hrnl   magic b"HRNL", uint32 count, then count float64
                    scores in [0, 1]

plus a `manifest.tsv` with the header line `video_id<TAB>split` and one
row per video, split being "train" or "test". Features are stored as
float32 (the precision the upstream extractors emit) and widened to
float64 in memory, so a write/load round-trip of float32-representable
values is bit-exact.

Label files carry either one score per subshot of the raw grid or one
score per frame; both are expanded to per-frame scores, carried through
any length normalization, and averaged over each subshot's real (non-pad)
frames to produce the per-subshot targets.
"""

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .model import SubshotGrid, make_grid
from .numerics import make_rng

__all__ = [
    "DatasetError",
    "FrameFeatureSequence",
    "SubshotLabel",
    "LabeledVideo",
    "encode_label",
    "normalize_length",
    "sample_indices",
    "write_features",
    "read_features",
    "write_labels",
    "read_labels",
    "write_manifest",
    "read_manifest",
    "save_dataset",
    "load_dataset",
    "build_labeled_video",
    "generate_synthetic",
]

FEATURES_MAGIC = b"HRNF"
LABELS_MAGIC = b"HRNL"
FEATURES_EXT = ".hrnf"
LABELS_EXT = ".hrnl"
MANIFEST_NAME = "manifest.tsv"
MANIFEST_HEADER = "video_id\tsplit"


class DatasetError(ValueError):
    """Malformed dataset file; the message names file, offset and constraint."""


@dataclass
class FrameFeatureSequence:
    """One video: a T x d matrix of per-frame feature vectors."""

    video_id: str
    features: np.ndarray

    @property
    def total_frames(self):
        return self.features.shape[0]

    @property
    def feature_size(self):
        return self.features.shape[1]


@dataclass
class SubshotLabel:
    """Ground truth for one subshot: raw score and its (non-key, key) target."""

    raw_score: float
    target: np.ndarray


@dataclass
class LabeledVideo:
    sequence: FrameFeatureSequence
    labels: list
    grid: SubshotGrid


def encode_label(raw):
    """Score in [0, 1] (or a bool) -> target (1 - raw, raw)."""
    raw = float(raw)
    if not 0.0 <= raw <= 1.0:
        raise ValueError(f"subshot score must lie in [0, 1], got {raw}")
    return SubshotLabel(raw_score=raw, target=np.array([1.0 - raw, raw]))


def sample_indices(total, count):
    """`count` strictly increasing indices: round(k * (total-1) / (count-1)).

    Requires total > count so the spacing exceeds one and no index repeats;
    the first index is 0 and the last is total - 1.
    """
    if count < 2 or total <= count:
        raise ValueError(f"need total > count >= 2, got total={total} count={count}")
    scale = (total - 1) / (count - 1)
    return np.floor(np.arange(count) * scale + 0.5).astype(int)


def normalize_length(seq, max_frames, subshot_length):
    """Fixed-shape mode: sample long videos down, zero-pad short ones.

    max_frames must be a multiple of subshot_length so the padded grid
    tiles exactly. Videos at the target length pass through unchanged.
    """
    if max_frames % subshot_length != 0:
        raise ValueError(
            f"max_frames {max_frames} must be divisible by subshot length "
            f"{subshot_length}"
        )
    total = seq.total_frames
    if total == max_frames:
        return seq
    if total > max_frames:
        picked = seq.features[sample_indices(total, max_frames)]
        return FrameFeatureSequence(video_id=seq.video_id, features=picked)
    padded = np.zeros((max_frames, seq.feature_size))
    padded[:total] = seq.features
    return FrameFeatureSequence(video_id=seq.video_id, features=padded)


def write_features(path, seq):
    encoded = seq.video_id.encode("utf-8")
    total, dim = seq.features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<II", total, dim))
        fh.write(np.ascontiguousarray(seq.features, dtype="<f4").tobytes())


def _need(blob, offset, nbytes, path, what):
    if len(blob) < offset + nbytes:
        raise DatasetError(
            f"{path}: offset {offset}: truncated while reading {what} "
            f"({nbytes} bytes needed, {len(blob) - offset} left)"
        )


def read_features(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURES_MAGIC:
        raise DatasetError(f"{path}: offset 0: bad magic, expected {FEATURES_MAGIC!r}")
    offset = 4
    _need(blob, offset, 4, path, "video id length")
    (id_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    _need(blob, offset, id_len, path, "video id")
    try:
        video_id = blob[offset : offset + id_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetError(f"{path}: offset {offset}: video id is not UTF-8") from exc
    offset += id_len
    _need(blob, offset, 8, path, "frame/feature counts")
    total, dim = struct.unpack_from("<II", blob, offset)
    offset += 8
    if total < 1 or dim < 1:
        raise DatasetError(
            f"{path}: offset {offset - 8}: frame and feature counts must be "
            f"positive, got T={total} d={dim}"
        )
    nbytes = 4 * total * dim
    _need(blob, offset, nbytes, path, "feature matrix")
    features = (
        np.frombuffer(blob, dtype="<f4", count=total * dim, offset=offset)
        .astype(np.float64)
        .reshape(total, dim)
    )
    offset += nbytes
    if offset != len(blob):
        raise DatasetError(
            f"{path}: offset {offset}: {len(blob) - offset} unexpected trailing bytes"
        )
    if not np.all(np.isfinite(features)):
        raise DatasetError(f"{path}: offset 16: non-finite feature values")
    return FrameFeatureSequence(video_id=video_id, features=features)


def write_labels(path, scores):
    scores = np.asarray(scores, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(LABELS_MAGIC)
        fh.write(struct.pack("<I", scores.shape[0]))
        fh.write(np.ascontiguousarray(scores, dtype="<f8").tobytes())


def read_labels(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != LABELS_MAGIC:
        raise DatasetError(f"{path}: offset 0: bad magic, expected {LABELS_MAGIC!r}")
    offset = 4
    _need(blob, offset, 4, path, "score count")
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    nbytes = 8 * count
    _need(blob, offset, nbytes, path, "scores")
    scores = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(
        np.float64
    )
    offset += nbytes
    if offset != len(blob):
        raise DatasetError(
            f"{path}: offset {offset}: {len(blob) - offset} unexpected trailing bytes"
        )
    bad = np.nonzero(~((scores >= 0.0) & (scores <= 1.0)))[0]
    if bad.size:
        raise DatasetError(
            f"{path}: offset {8 + 8 * int(bad[0])}: score "
            f"{scores[bad[0]]} outside [0, 1]"
        )
    return scores


def write_manifest(directory, splits):
    """splits: ordered (video_id, split) pairs."""
    lines = [MANIFEST_HEADER]
    lines.extend(f"{video_id}\t{split}" for video_id, split in splits)
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise DatasetError(
            f"{path}: offset 0: first line must be {MANIFEST_HEADER!r}"
        )
    entries = []
    for number, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ("train", "test"):
            raise DatasetError(
                f"{path}: line {number}: expected 'video_id<TAB>train|test', "
                f"got {line!r}"
            )
        entries.append((parts[0], parts[1]))
    return entries


def _frame_scores(scores, grid, path="<memory>"):
    """Expand subshot- or frame-granular scores to one score per frame."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] == grid.subshot_count:
        return np.repeat(scores, grid.subshot_length)[: grid.total_frames]
    if scores.shape[0] == grid.total_frames:
        return scores
    raise DatasetError(
        f"{path}: offset 4: {scores.shape[0]} scores fit neither "
        f"{grid.subshot_count} subshots nor {grid.total_frames} frames"
    )


def build_labeled_video(seq, scores, subshot_length, max_frames=None, label_path="<memory>"):
    """Pair a sequence with per-subshot labels on its active grid.

    Scores arrive at subshot or frame granularity on the raw timeline; they
    follow the frames through sampling, and padded frames never enter a
    subshot's average.
    """
    raw_grid = make_grid(seq.total_frames, subshot_length)
    frame_scores = _frame_scores(scores, raw_grid, label_path)
    if max_frames is not None:
        seq = normalize_length(seq, max_frames, subshot_length)
        if frame_scores.shape[0] > max_frames:
            frame_scores = frame_scores[
                sample_indices(frame_scores.shape[0], max_frames)
            ]
    grid = make_grid(seq.total_frames, subshot_length)
    real_total = frame_scores.shape[0]
    labels = []
    for k in range(grid.subshot_count):
        start = k * grid.subshot_length
        stop = min(start + grid.subshot_length, real_total)
        if start >= real_total:
            labels.append(encode_label(0.0))
        else:
            labels.append(encode_label(float(np.mean(frame_scores[start:stop]))))
    return LabeledVideo(sequence=seq, labels=labels, grid=grid)


def save_dataset(directory, videos, splits=None):
    """Write one .hrnf/.hrnl pair per LabeledVideo plus the manifest.

    splits maps video_id -> "train"/"test"; unlisted videos default to
    "train".
    """
    os.makedirs(directory, exist_ok=True)
    splits = splits or {}
    manifest = []
    for video in videos:
        video_id = video.sequence.video_id
        write_features(os.path.join(directory, video_id + FEATURES_EXT), video.sequence)
        write_labels(
            os.path.join(directory, video_id + LABELS_EXT),
            [label.raw_score for label in video.labels],
        )
        manifest.append((video_id, splits.get(video_id, "train")))
    write_manifest(directory, manifest)


def load_dataset(directory, subshot_length, split=None, max_frames=None):
    """Load every video (optionally one split), ordered by video_id.

    Membership comes from the manifest when present, otherwise from the
    .hrnf files found in the directory (in which case no split filter can
    be applied).
    """
    if not os.path.isdir(directory):
        raise DatasetError(f"{directory}: not a directory")
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    if os.path.exists(manifest_path):
        entries = read_manifest(directory)
        if split is not None:
            entries = [(vid, tag) for vid, tag in entries if tag == split]
        ids = [vid for vid, _ in entries]
    else:
        if split is not None:
            raise DatasetError(
                f"{directory}: no {MANIFEST_NAME}, cannot filter by split"
            )
        ids = [
            name[: -len(FEATURES_EXT)]
            for name in os.listdir(directory)
            if name.endswith(FEATURES_EXT)
        ]
    videos = []
    feature_size = None
    for video_id in sorted(ids):
        feat_path = os.path.join(directory, video_id + FEATURES_EXT)
        label_path = os.path.join(directory, video_id + LABELS_EXT)
        if not os.path.exists(feat_path):
            raise DatasetError(f"{feat_path}: listed in manifest but missing")
        if not os.path.exists(label_path):
            raise DatasetError(f"{label_path}: listed in manifest but missing")
        seq = read_features(feat_path)
        if seq.video_id != video_id:
            raise DatasetError(
                f"{feat_path}: offset 8: embedded id {seq.video_id!r} does not "
                f"match file name"
            )
        if feature_size is None:
            feature_size = seq.feature_size
        elif seq.feature_size != feature_size:
            raise DatasetError(
                f"{feat_path}: feature size {seq.feature_size} differs from "
                f"{feature_size} elsewhere in the dataset"
            )
        scores = read_labels(label_path)
        videos.append(
            build_labeled_video(seq, scores, subshot_length, max_frames, label_path)
        )
    return videos


def generate_synthetic(
    n_videos, total_frames, subshot_length, d_feat, key_fraction, signal, seed
):
    """Planted-signal videos: key subshots have feature mean +signal, others -signal.

    Every entry gets unit-variance Gaussian noise; labels are binary per
    subshot. Features are rounded through float32 so writing and reloading
    them is lossless. Fully determined by the seed.
    """
    if not 0.0 < key_fraction < 1.0:
        raise ValueError(f"key fraction must be in (0, 1), got {key_fraction}")
    rng = make_rng(seed)
    grid = make_grid(total_frames, subshot_length)
    m = grid.subshot_count
    # ceil of the exact fraction; the tiny slack absorbs float roundup spill
    n_key = max(1, min(m, math.ceil(key_fraction * m - 1e-9)))
    videos = []
    for v in range(n_videos):
        key_set = set(rng.choice(m, size=n_key, replace=False).tolist())
        blocks = []
        scores = np.zeros(m)
        for k in range(m):
            start = k * subshot_length
            frames = min(subshot_length, total_frames - start)
            mean = signal if k in key_set else -signal
            blocks.append(rng.normal(mean, 1.0, size=(frames, d_feat)))
            scores[k] = 1.0 if k in key_set else 0.0
        features = np.concatenate(blocks).astype(np.float32).astype(np.float64)
        seq = FrameFeatureSequence(video_id=f"synth{v:04d}", features=features)
        videos.append(build_labeled_video(seq, scores, subshot_length))
    return videos
