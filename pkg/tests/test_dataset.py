import json

import numpy as np
import pytest

from clickfoley import augment, dataset, media

from conftest import make_triplet


class StubEmbedder:
    """Returns fixed vectors regardless of input."""

    def __init__(self, text_vec, other_vec):
        self.text_vec = np.asarray(text_vec, dtype=np.float64)
        self.other_vec = np.asarray(other_vec, dtype=np.float64)

    def embed_text(self, text):
        return self.text_vec

    def embed_audio(self, wave):
        return self.other_vec

    def embed_image(self, frame):
        return self.other_vec


class TestScoreSample:
    def test_identical_embeddings_scores_one(self):
        t = make_triplet()
        e = StubEmbedder([1, 0], [1, 0])
        s = dataset.score_sample(t, "x", e, e, sample_id="a")
        assert s.sim_audio_text == pytest.approx(1.0)
        assert s.sim_image_text == pytest.approx(1.0)
        assert s.mean_sim == pytest.approx(1.0)

    def test_orthogonal_audio_aligned_image(self):
        t = make_triplet()
        audio_e = StubEmbedder([1, 0], [0, 1])   # orthogonal
        image_e = StubEmbedder([1, 0], [1, 0])   # aligned
        s = dataset.score_sample(t, "x", audio_e, image_e)
        assert s.mean_sim == pytest.approx(0.5)

    def test_toy_embedders_deterministic_per_seed(self):
        t = make_triplet()
        a1 = dataset.ToyTextAudioEmbedder(seed=5)
        a2 = dataset.ToyTextAudioEmbedder(seed=5)
        np.testing.assert_array_equal(a1.embed_text("cat"), a2.embed_text("cat"))
        np.testing.assert_array_equal(a1.embed_audio(t.audio), a2.embed_audio(t.audio))
        assert not np.allclose(
            dataset.ToyTextAudioEmbedder(seed=6).embed_text("cat"), a1.embed_text("cat")
        )


def scored(id_, cls, a, i):
    return dataset.ScoredSample(id=id_, class_text=cls, sim_audio_text=a, sim_image_text=i)


class TestSelectTopK:
    def test_counts_per_class(self):
        samples = [scored(f"{c}-{i}", f"class{c}", 0.1 * i, 0.1 * i) for c in range(3) for i in range(6)]
        m = dataset.select_top_k(samples, k_train=4, k_test=1)
        assert len(m.ids("train")) == 12 and len(m.ids("test")) == 3

    def test_highest_sim_wins(self):
        m = dataset.select_top_k(
            [scored("a", "c", 0.9, 0.9), scored("b", "c", 0.8, 0.8)], k_train=1, k_test=0
        )
        assert m.ids("train") == ["a"]

    def test_tie_break_by_id(self):
        samples = [scored(x, "c", 0.5, 0.5) for x in ("delta", "alpha", "bravo")]
        m = dataset.select_top_k(samples, k_train=2, k_test=1)
        assert m.ids("train") == ["alpha", "bravo"]
        assert m.ids("test") == ["delta"]

    def test_insufficient_class_takes_all_with_warning(self):
        samples = [scored("a", "c", 0.5, 0.5)]
        with pytest.warns(UserWarning):
            m = dataset.select_top_k(samples, k_train=2, k_test=2)
        assert m.ids() == ["a"]

    def test_splits_disjoint_and_exhaustive(self):
        rng = np.random.default_rng(0)
        samples = [
            scored(f"{c}-{i}", f"class{c}", rng.random(), rng.random())
            for c in range(4)
            for i in range(7)
        ]
        m = dataset.select_top_k(samples, k_train=5, k_test=2)
        train, test = set(m.ids("train")), set(m.ids("test"))
        assert not (train & test)
        assert len(train) + len(test) == 4 * 7


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        samples = [scored("a", "c", 0.4, 0.6), scored("b", "c", 0.2, 0.2)]
        m = dataset.select_top_k(samples, 1, 1, root=str(tmp_path))
        m.save()
        back = dataset.Manifest.load(tmp_path)
        assert back.entries == m.entries

    def test_duplicate_ids_rejected(self):
        entries = [{"id": "x"}, {"id": "x"}]
        with pytest.raises(Exception):
            dataset.Manifest(root="", entries=entries)


class TestAttachMasks:
    def test_identity_when_masks_present(self, tiny_corpus):
        before = json.dumps(tiny_corpus.entries)
        after = dataset.attach_masks(tiny_corpus)
        assert json.dumps(after.entries) == before

    def test_flags_when_adapter_absent(self, tmp_path):
        m = dataset.select_top_k([scored("ghost", "c", 0.5, 0.5)], 1, 0, root=str(tmp_path))
        out = dataset.attach_masks(m, adapter=None)
        assert out.entries[0]["masks_missing"] is True


class TestToyCorpus:
    def test_manifest_counts(self, tiny_corpus):
        assert len(tiny_corpus.entries) == 9
        assert len(tiny_corpus.ids("train")) == 6
        assert len(tiny_corpus.ids("test")) == 3

    def test_load_triplet_satisfies_invariants(self, tiny_corpus):
        t = dataset.load_triplet(tiny_corpus, tiny_corpus.ids()[0])
        assert t.video.t == t.masks.t
        assert (t.video.height, t.video.width) == (224, 224)
        assert abs(t.audio.duration - t.video.duration) <= 1.0 / t.video.fps

    def test_unknown_id_rejected(self, tiny_corpus):
        with pytest.raises(KeyError):
            dataset.load_triplet(tiny_corpus, "nope")

    def test_missing_file_reported_with_path(self, tiny_corpus, tmp_path):
        entry = dict(tiny_corpus.entry(tiny_corpus.ids()[0]))
        entry["id"] = "broken"
        entry["paths"] = {k: f"broken/{v.split('/',1)[1]}" for k, v in entry["paths"].items()}
        m = dataset.Manifest(root=tiny_corpus.root, entries=[entry])
        with pytest.raises(FileNotFoundError):
            dataset.load_triplet(m, "broken")

    def test_masks_round_trip_bit_stable(self, tiny_corpus):
        sid = tiny_corpus.ids()[0]
        once = dataset.load_triplet(tiny_corpus, sid)
        again = dataset.load_triplet(tiny_corpus, sid)
        np.testing.assert_array_equal(once.masks.masks, again.masks.masks)
        np.testing.assert_array_equal(once.audio.samples, again.audio.samples)
        np.testing.assert_array_equal(once.video.frames, again.video.frames)

    def test_tone_frequency_fft_peak(self, tiny_corpus):
        for c in range(3):
            sid = f"c{c:02d}_s000"
            t = dataset.load_triplet(tiny_corpus, sid)
            spec = np.abs(np.fft.rfft(t.audio.samples))
            freqs = np.fft.rfftfreq(t.audio.n_samples, 1.0 / t.audio.sample_rate)
            peak = freqs[np.argmax(spec)]
            bin_width = freqs[1] - freqs[0]
            assert abs(peak - dataset.class_tone_hz(c)) <= bin_width

    def test_area_rms_correlation(self, tiny_corpus):
        sid = tiny_corpus.ids()[0]
        t = dataset.load_triplet(tiny_corpus, sid)
        ratios = augment.area_ratios(t.masks)
        per_frame = t.audio.n_samples // t.video.t
        rms = np.sqrt(
            (t.audio.samples[: per_frame * t.video.t] ** 2)
            .reshape(t.video.t, per_frame)
            .mean(axis=1)
        )
        r = np.corrcoef(ratios, rms)[0, 1]
        assert r > 0.9

    def test_seed_determinism(self, tmp_path):
        m1 = dataset.generate_toy_corpus(2, 2, seed=3, out_dir=tmp_path / "a", duration=3.0)
        m2 = dataset.generate_toy_corpus(2, 2, seed=3, out_dir=tmp_path / "b", duration=3.0)
        e1 = [{k: v for k, v in e.items()} for e in m1.entries]
        e2 = [{k: v for k, v in e.items()} for e in m2.entries]
        assert e1 == e2
        t1 = dataset.load_triplet(m1, m1.ids()[0])
        t2 = dataset.load_triplet(m2, m2.ids()[0])
        np.testing.assert_array_equal(t1.video.frames, t2.video.frames)
        np.testing.assert_array_equal(t1.audio.samples, t2.audio.samples)
