import numpy as np
import pytest
from scipy.io import wavfile

from misavoidd import data
from misavoidd.data import DataError, SynthConfig, VideoRecord
from misavoidd.metrics import mann_whitney_auc


def record(n_v=300, n_a=300, vid="v0", label=0, d_a=3, d_v=2, split="train"):
    rng = np.random.default_rng(len(vid) + n_v)
    return VideoRecord(vid, label, rng.normal(size=(n_a, d_a)), rng.normal(size=(n_v, d_v)), split)


@pytest.fixture
def dataset_dir(tmp_path):
    rng = np.random.default_rng(0)
    (tmp_path / "f").mkdir()
    for vid in ("a", "b"):
        data.write_features(tmp_path / f"f/{vid}_a.bin", rng.normal(size=(50, 13)))
        data.write_features(tmp_path / f"f/{vid}_v.bin", rng.normal(size=(40, 8)))
    return tmp_path


def write_manifest(path, rows):
    path.write_text("video_id,label,split,audio_path,visual_path\n" + "".join(",".join(r) + "\n" for r in rows))
    return path


class TestFeatureFiles:
    def test_roundtrip_and_layout(self, tmp_path):
        m = np.arange(6, dtype=float).reshape(2, 3) / 4
        data.write_features(tmp_path / "x.bin", m)
        raw = (tmp_path / "x.bin").read_bytes()
        assert raw[:8] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
        np.testing.assert_array_equal(np.frombuffer(raw[8:], "<f4"), m.ravel().astype("<f4"))
        np.testing.assert_array_equal(data.read_features(tmp_path / "x.bin"), m)

    def test_truncated(self, tmp_path):
        data.write_features(tmp_path / "x.bin", np.ones((2, 3)))
        (tmp_path / "y.bin").write_bytes((tmp_path / "x.bin").read_bytes()[:-4])
        with pytest.raises(DataError, match="expected"):
            data.read_features(tmp_path / "y.bin")


class TestManifest:
    def test_happy_path(self, dataset_dir):
        m = write_manifest(
            dataset_dir / "m.csv",
            [["a", "real", "train", "f/a_a.bin", "f/a_v.bin"], ["b", "fake", "test", "f/b_a.bin", "f/b_v.bin"]],
        )
        recs = data.load_manifest(m)
        assert [r.video_id for r in recs] == ["a", "b"]
        assert [r.label for r in recs] == [0, 1]
        assert recs[0].audio_features.shape == (50, 13)

    def test_unknown_label_names_row(self, dataset_dir):
        m = write_manifest(dataset_dir / "m.csv", [["a", "genuine", "train", "f/a_a.bin", "f/a_v.bin"]])
        with pytest.raises(DataError, match="row 1.*genuine"):
            data.load_manifest(m)

    def test_dimension_mismatch(self, dataset_dir):
        m = write_manifest(dataset_dir / "m.csv", [["a", "real", "train", "f/a_a.bin", "f/a_v.bin"]])
        with pytest.raises(DataError, match="audio dimension 13.*20"):
            data.load_manifest(m, d_audio=20)

    def test_missing_file(self, dataset_dir):
        m = write_manifest(
            dataset_dir / "m.csv",
            [["a", "real", "train", "f/a_a.bin", "f/a_v.bin"], ["b", "real", "train", "f/nope.bin", "f/b_v.bin"]],
        )
        with pytest.raises(DataError, match="row 2.*missing"):
            data.load_manifest(m)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            data.load_manifest(tmp_path / "none.csv")

    def test_wav_audio_routed_through_mfcc(self, dataset_dir):
        t = np.arange(16000) / 16000
        wavfile.write(dataset_dir / "f/a.wav", 16000, (0.3 * np.sin(2 * np.pi * 300 * t)).astype(np.float32))
        m = write_manifest(dataset_dir / "m.csv", [["a", "real", "val", "f/a.wav", "f/a_v.bin"]])
        (rec,) = data.load_manifest(m)
        assert rec.audio_features.shape == (98, 13)

    def test_write_dataset_roundtrip(self, tmp_path):
        recs = data.synth_generate(SynthConfig(num_videos=4, num_frames=40, seed=3))
        manifest = data.write_dataset(recs, tmp_path)
        loaded = data.load_manifest(manifest)
        assert [r.video_id for r in loaded] == [r.video_id for r in recs]
        for a, b in zip(recs, loaded):
            np.testing.assert_allclose(a.visual_features, b.visual_features, rtol=1e-6, atol=1e-6)
            assert (a.label, a.split) == (b.label, b.split)


class TestSegmentation:
    def test_train_budget(self):
        assert len(data.segment_video(record(300), 30, train_mode=True)) == 10

    def test_eval_budget(self):
        assert len(data.segment_video(record(300), 30, train_mode=False)) == 6

    def test_eval_exact_180(self):
        assert len(data.segment_video(record(180, 180), 30, train_mode=False)) == 6

    def test_too_few_frames(self):
        with pytest.raises(DataError, match="v0"):
            data.segment_video(record(29, 29), 30)

    def test_audio_aligned_by_rate_ratio(self):
        seqs = data.segment_video(record(n_v=300, n_a=1000), 30, train_mode=True)
        assert all(s.audio.shape == (100, 3) for s in seqs)
        assert all(s.visual.shape == (30, 2) for s in seqs)

    @pytest.mark.parametrize("n_v,train", [(300, True), (250, True), (300, False), (95, False)])
    def test_exhaustive_non_overlapping(self, n_v, train):
        r = record(n_v=n_v, n_a=n_v)
        seqs = data.segment_video(r, 30, train)
        budget = 300 if train else 180
        used = (min(n_v, budget) // 30) * 30
        np.testing.assert_array_equal(np.concatenate([s.visual for s in seqs]), r.visual_features[:used])
        assert all(s.label == r.label and s.video_id == r.video_id for s in seqs)


class TestBatches:
    def seqs(self, n):
        return data.make_sequences([record(30 * n, 30 * n, vid=f"v{n}")], 30)

    def test_short_batch(self):
        bs = list(data.batches(self.seqs(10), 32))
        assert [len(b) for b in bs] == [10]

    def test_two_full(self):
        seqs = self.seqs(10) * 6 + self.seqs(4)
        bs = list(data.batches(seqs, 32))
        assert [len(b) for b in bs] == [32, 32]

    def test_seeded_shuffle(self):
        seqs = [data.SequenceSample(f"v{i}", i % 2, np.zeros((2, 1)), np.zeros((2, 1))) for i in range(50)]
        a = [b.video_ids for b in data.batches(seqs, 8, seed=7)]
        b = [b.video_ids for b in data.batches(seqs, 8, seed=7)]
        c = [b.video_ids for b in data.batches(seqs, 8, seed=8)]
        assert a == b and a != c

    def test_empty(self):
        with pytest.raises(DataError):
            list(data.batches([], 4))


class TestSynth:
    def test_deterministic(self):
        a = data.synth_generate(SynthConfig(num_videos=10, seed=4))
        b = data.synth_generate(SynthConfig(num_videos=10, seed=4))
        for x, y in zip(a, b):
            assert x.audio_features.tobytes() == y.audio_features.tobytes()
            assert x.visual_features.tobytes() == y.visual_features.tobytes()

    def test_balance_and_splits(self):
        recs = data.synth_generate(SynthConfig(num_videos=100, num_frames=30))
        assert sum(r.label for r in recs) == 50
        counts = {s: len(data.by_split(recs, s)) for s in data.SPLITS}
        assert counts == {"train": 70, "val": 15, "test": 15}
        for s in ("val", "test"):
            assert {r.label for r in data.by_split(recs, s)} == {0, 1}

    def test_invalid(self):
        with pytest.raises(DataError):
            data.synth_generate(SynthConfig(noise_sigma=0.0))

    def test_real_mean_converges(self):
        cfg = SynthConfig(num_videos=1000, num_frames=1, seed=9)
        recs = [r for r in data.synth_generate(cfg) if r.label == 0]
        model = data.synth_model(cfg)
        X = np.array([r.audio_features[0] for r in recs])
        se = X.std(axis=0, ddof=1) / np.sqrt(len(recs))
        expected = model.mix_audio @ model.latent_mean
        assert np.all(np.abs(X.mean(axis=0) - expected) < 3 * se)

    def _probe_auc(self, cfg):
        recs = data.synth_generate(cfg)

        def feats(rs):
            X = np.array([np.r_[r.audio_features.mean(0), r.visual_features.mean(0), 1.0] for r in rs])
            return X, np.array([r.label for r in rs])

        Xtr, ytr = feats(data.by_split(recs, "train"))
        Xte, yte = feats([r for r in recs if r.split != "train"])
        w = np.linalg.lstsq(Xtr, ytr, rcond=None)[0]
        return mann_whitney_auc(Xte @ w, yte)

    def test_large_shift_linearly_separable(self):
        assert self._probe_auc(SynthConfig(num_videos=200, fake_shift=2.5, noise_sigma=0.5)) > 0.99

    def test_no_shift_no_signal(self):
        aucs = [self._probe_auc(SynthConfig(num_videos=200, fake_shift=0.0, seed=s)) for s in range(10)]
        assert abs(np.mean(aucs) - 0.5) < 0.1

    def test_manipulation_kinds(self):
        recs = data.synth_generate(SynthConfig(num_videos=60, num_frames=5))
        kinds = {r.manipulation for r in recs if r.label == 1}
        assert kinds == {"audio", "visual", "both"}
        assert {r.manipulation for r in recs if r.label == 0} == {"none"}
