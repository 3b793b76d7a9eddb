"""Video records, feature files, sequence segmentation and batching.

Manifest format (CSV with header)::

    video_id,label,split,audio_path,visual_path

Feature files hold two little-endian uint32 values (rows, cols) followed by
row-major little-endian float32 data. An ``audio_path`` ending in ``.wav``
is converted to MFCC frames on load.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import audio

TRAIN_FRAME_BUDGET = 300
EVAL_FRAME_BUDGET = 180
SPLITS = ("train", "val", "test")
LABELS = {"real": 0, "fake": 1, "0": 0, "1": 1}
MANIFEST_HEADER = ["video_id", "label", "split", "audio_path", "visual_path"]


class DataError(ValueError):
    pass


@dataclass
class VideoRecord:
    video_id: str
    label: int
    audio_features: np.ndarray
    visual_features: np.ndarray
    split: str = "train"
    manipulation: str = "none"  # synthetic data only: none / audio / visual / both

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"{self.video_id}: label must be 0 or 1, got {self.label!r}")
        for name in ("audio_features", "visual_features"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[0] == 0:
                raise DataError(f"{self.video_id}: {name} must be a nonempty matrix, got shape {arr.shape}")
        if self.split not in SPLITS:
            raise DataError(f"{self.video_id}: unknown split {self.split!r}")


@dataclass
class SequenceSample:
    video_id: str
    label: int
    audio: np.ndarray  # [L_a, d_a]
    visual: np.ndarray  # [L_v, d_v]


@dataclass
class SequenceBatch:
    x_audio: np.ndarray  # [B, L_a, d_a]
    x_visual: np.ndarray  # [B, L_v, d_v]
    labels: np.ndarray  # [B]
    video_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.labels.shape[0]


# -- binary feature files ---------------------------------------------------
def write_features(path: str | Path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", *m.shape))
        fh.write(m.tobytes())


def read_features(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header")
    rows, cols = struct.unpack_from("<II", raw, 0)
    expected = 8 + 4 * rows * cols
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(rows, cols).astype(np.float64)


# -- manifests --------------------------------------------------------------
def _load_audio(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".wav":
        return audio.mfcc(audio.read_wav(path)).frames
    return read_features(path)


def load_manifest(
    path: str | Path, d_audio: int | None = None, d_visual: int | None = None
) -> list[VideoRecord]:
    """Load every record of a manifest, in file order.

    Feature paths are resolved relative to the manifest's directory.
    Dimensions default to those of the first record.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    records: list[VideoRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise DataError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise DataError(f"{path}: row {row_no}: expected 5 fields, got {len(row)}")
            vid, label_s, split, a_path, v_path = (c.strip() for c in row)
            if label_s.lower() not in LABELS:
                raise DataError(f"{path}: row {row_no}: unknown label {label_s!r} (use real or fake)")
            if split not in SPLITS:
                raise DataError(f"{path}: row {row_no}: unknown split {split!r}")
            try:
                a = _load_audio(base / a_path)
                v = read_features(base / v_path)
            except FileNotFoundError as exc:
                raise DataError(f"{path}: row {row_no}: missing feature file {exc.filename}") from None
            except (DataError, ValueError) as exc:
                raise DataError(f"{path}: row {row_no}: {exc}") from None
            if d_audio is None:
                d_audio = a.shape[1]
            if d_visual is None:
                d_visual = v.shape[1]
            if a.shape[1] != d_audio:
                raise DataError(f"{path}: row {row_no}: audio dimension {a.shape[1]}, dataset declares {d_audio}")
            if v.shape[1] != d_visual:
                raise DataError(f"{path}: row {row_no}: visual dimension {v.shape[1]}, dataset declares {d_visual}")
            records.append(VideoRecord(vid, LABELS[label_s.lower()], a, v, split))
    return records


def write_dataset(records: Sequence[VideoRecord], out_dir: str | Path) -> Path:
    """Write feature files plus ``manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            a_rel = f"features/{r.video_id}.audio.bin"
            v_rel = f"features/{r.video_id}.visual.bin"
            write_features(out / a_rel, r.audio_features)
            write_features(out / v_rel, r.visual_features)
            w.writerow([r.video_id, "fake" if r.label else "real", r.split, a_rel, v_rel])
    return manifest


# -- segmentation -----------------------------------------------------------
def segment_video(record: VideoRecord, seq_len_visual: int = 30, train_mode: bool = True) -> list[SequenceSample]:
    """Cut a video into non-overlapping aligned audio/visual windows.

    Visual frames are truncated to the first 300 (train) or 180 (eval)
    frames. The audio window is the visual window scaled by the video's
    audio/visual frame-rate ratio. Trailing partial windows are dropped.
    """
    if seq_len_visual < 1:
        raise DataError(f"seq_len_visual must be >= 1, got {seq_len_visual}")
    n_v = record.visual_features.shape[0]
    n_a = record.audio_features.shape[0]
    budget = TRAIN_FRAME_BUDGET if train_mode else EVAL_FRAME_BUDGET
    usable_v = min(n_v, budget)
    if usable_v < seq_len_visual:
        raise DataError(
            f"video {record.video_id}: {usable_v} visual frames, fewer than one window of {seq_len_visual}"
        )
    audio_win = max(1, int(round(seq_len_visual * n_a / n_v)))
    out = []
    for i in range(usable_v // seq_len_visual):
        a0 = i * audio_win
        if a0 + audio_win > n_a:
            break
        out.append(
            SequenceSample(
                record.video_id,
                record.label,
                record.audio_features[a0 : a0 + audio_win],
                record.visual_features[i * seq_len_visual : (i + 1) * seq_len_visual],
            )
        )
    return out


def make_sequences(records: Sequence[VideoRecord], seq_len_visual: int = 30, train_mode: bool = True) -> list[SequenceSample]:
    seqs: list[SequenceSample] = []
    for r in records:
        seqs.extend(segment_video(r, seq_len_visual, train_mode))
    return seqs


def batches(
    sequences: Sequence[SequenceSample], batch_size: int = 32, seed: int = 0, shuffle: bool = True
) -> Iterator[SequenceBatch]:
    """Yield batches of sequences; the final short batch is kept."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    if len(sequences) == 0:
        raise DataError("no sequences to batch")
    order = np.arange(len(sequences))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(sequences))
    for start in range(0, len(order), batch_size):
        chunk = [sequences[i] for i in order[start : start + batch_size]]
        yield SequenceBatch(
            x_audio=np.stack([s.audio for s in chunk]),
            x_visual=np.stack([s.visual for s in chunk]),
            labels=np.array([s.label for s in chunk], dtype=np.float64),
            video_ids=[s.video_id for s in chunk],
        )


# -- synthetic data ---------------------------------------------------------
@dataclass
class SynthConfig:
    num_videos: int = 200
    d_a: int = 13
    d_v: int = 32
    shared_dim: int = 8
    fake_shift: float = 2.5
    noise_sigma: float = 0.5
    num_frames: int = 300
    train_frac: float = 0.7
    val_frac: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.num_videos < 2 or self.num_videos % 2:
            raise DataError(f"num_videos must be an even number >= 2, got {self.num_videos}")
        if self.fake_shift < 0:
            raise DataError("fake_shift must be >= 0")
        if self.noise_sigma <= 0:
            raise DataError("noise_sigma must be > 0")
        if min(self.d_a, self.d_v, self.shared_dim, self.num_frames) < 1:
            raise DataError("dimensions and num_frames must be positive")
        if not (0 < self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac <= 1):
            raise DataError("invalid split fractions")


@dataclass
class SynthModel:
    """The fixed generative parameters drawn once per dataset."""

    latent_mean: np.ndarray
    mix_audio: np.ndarray  # [d_a, shared_dim]
    mix_visual: np.ndarray  # [d_v, shared_dim]
    fake_dir_audio: np.ndarray
    fake_dir_visual: np.ndarray


def synth_model(cfg: SynthConfig) -> SynthModel:
    rng = np.random.default_rng([cfg.seed, 0])
    k = cfg.shared_dim
    da, dv = rng.normal(size=cfg.d_a), rng.normal(size=cfg.d_v)
    return SynthModel(
        latent_mean=rng.normal(size=k),
        mix_audio=rng.normal(size=(cfg.d_a, k)) / np.sqrt(k),
        mix_visual=rng.normal(size=(cfg.d_v, k)) / np.sqrt(k),
        fake_dir_audio=da / np.linalg.norm(da),
        fake_dir_visual=dv / np.linalg.norm(dv),
    )


def _split_names(n: int, train_frac: float, val_frac: float) -> list[str]:
    n_train = int(round(train_frac * n))
    n_val = int(round(val_frac * n))
    return ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)


def synth_generate(cfg: SynthConfig) -> list[VideoRecord]:
    """Draw a balanced synthetic audio-visual dataset from a shared latent model.

    Each frame has latent ``z ~ N(mu, I)``; audio is ``A_a z + noise`` and
    visual ``A_v z + noise``. Fake videos get ``fake_shift`` added along a
    fixed unit direction in the audio stream, the visual stream, or both
    (chosen uniformly per video).
    """
    cfg.validate()
    model = synth_model(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    half = cfg.num_videos // 2
    # alternate real/fake so every split is balanced
    labels = np.tile([0, 1], half)
    splits = _split_names(cfg.num_videos, cfg.train_frac, cfg.val_frac)
    kinds = ("audio", "visual", "both")
    records = []
    for i, (label, split) in enumerate(zip(labels, splits)):
        z = model.latent_mean + rng.normal(size=(cfg.num_frames, cfg.shared_dim))
        xa = z @ model.mix_audio.T + cfg.noise_sigma * rng.normal(size=(cfg.num_frames, cfg.d_a))
        xv = z @ model.mix_visual.T + cfg.noise_sigma * rng.normal(size=(cfg.num_frames, cfg.d_v))
        manip = "none"
        if label == 1:
            manip = kinds[int(rng.integers(3))]
            if manip in ("audio", "both"):
                xa = xa + cfg.fake_shift * model.fake_dir_audio
            if manip in ("visual", "both"):
                xv = xv + cfg.fake_shift * model.fake_dir_visual
        records.append(VideoRecord(f"vid{i:05d}", int(label), xa, xv, split, manip))
    return records


def by_split(records: Sequence[VideoRecord], split: str) -> list[VideoRecord]:
    return [r for r in records if r.split == split]
