import math

import numpy as np
import pytest
import torch

from clickfoley import checkpoints, ocav
from clickfoley.dataset import Triplet
from clickfoley.encoders import EncoderConfig, build_audio_encoder, build_mve_encoder
from clickfoley.errors import TrainingDivergedError
from clickfoley.media import AudioWave, VideoClip
from clickfoley.segmentation import MaskTrack

from conftest import make_triplet

TINY_ENC = EncoderConfig(d=12, video_channels=3, mask_channels=2, audio_channels=3, spatial_pool=2, seed=0)


def cos_oracle(x, y):
    dot = sum(p * q for p, q in zip(x, y))
    nx = math.sqrt(sum(p * p for p in x))
    ny = math.sqrt(sum(q * q for q in y))
    return dot / (nx * ny)


def eq_loss_oracle(v, a, tau):
    """Double-loop reimplementation of the symmetric contrastive objective."""
    b = len(v)
    total = 0.0
    for i in range(b):
        num = math.exp(cos_oracle(v[i], a[i]) / tau)
        den_row = sum(math.exp(cos_oracle(v[i], a[j]) / tau) for j in range(b))
        den_col = sum(math.exp(cos_oracle(v[j], a[i]) / tau) for j in range(b))
        total += -0.5 * math.log(num / den_row) - 0.5 * math.log(num / den_col)
    return total / b


class TestCosineSimilarity:
    def test_identical(self):
        assert ocav.cosine_similarity([1, 0], [1, 0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert ocav.cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0)

    def test_hand_value(self):
        assert ocav.cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2))

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            ocav.cosine_similarity([0, 0], [1, 0])


class TestContrastiveLoss:
    def test_single_pair_is_zero(self):
        batch = ocav.FeaturePairBatch(np.array([[0.3, 0.4]]), np.array([[0.1, 0.9]]))
        assert ocav.contrastive_loss(batch, temperature=0.07) == 0.0

    def test_two_orthonormal_aligned_pairs(self):
        eye = np.eye(2)
        batch = ocav.FeaturePairBatch(eye, eye)
        want = math.log(1 + math.exp(-1))
        assert ocav.contrastive_loss(batch, temperature=1.0) == pytest.approx(want, abs=1e-6)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(5):
            b, d = int(rng.integers(2, 7)), int(rng.integers(2, 9))
            v = rng.normal(size=(b, d))
            a = rng.normal(size=(b, d))
            got = ocav.contrastive_loss(ocav.FeaturePairBatch(v, a), temperature=0.3)
            want = eq_loss_oracle(v.tolist(), a.tolist(), 0.3)
            assert got == pytest.approx(want, abs=1e-6)

    def test_symmetry_under_role_swap(self):
        rng = np.random.default_rng(1)
        v, a = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
        f = ocav.contrastive_loss(ocav.FeaturePairBatch(v, a), 0.2)
        g = ocav.contrastive_loss(ocav.FeaturePairBatch(a, v), 0.2)
        assert f == pytest.approx(g, abs=1e-9)

    def test_invariant_to_positive_rescaling(self):
        rng = np.random.default_rng(2)
        v, a = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        base = ocav.contrastive_loss(ocav.FeaturePairBatch(v, a), 0.5)
        v2 = v.copy()
        v2[2] *= 37.5
        a2 = a.copy()
        a2[0] *= 0.004
        scaled = ocav.contrastive_loss(ocav.FeaturePairBatch(v2, a2), 0.5)
        assert scaled == pytest.approx(base, abs=1e-6)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            v, a = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
            assert ocav.contrastive_loss(ocav.FeaturePairBatch(v, a), 0.1) >= 0.0

    def test_sharper_temperature_lowers_aligned_loss(self):
        eye = np.eye(4)
        batch = ocav.FeaturePairBatch(eye, eye)
        assert ocav.contrastive_loss(batch, 0.05) <= ocav.contrastive_loss(batch, 1.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        v = torch.tensor(rng.normal(size=(3, 5)), requires_grad=True)
        a = torch.tensor(rng.normal(size=(3, 5)), requires_grad=True)
        loss = ocav.contrastive_loss_t(v, a, 0.3)
        gv, ga = torch.autograd.grad(loss, (v, a))
        h = 1e-6
        for tensor, grad in ((v, gv), (a, ga)):
            flat = tensor.detach().reshape(-1)
            for idx in (0, 4, 11):
                orig = flat[idx].item()
                flat[idx] = orig + h
                hi = ocav.contrastive_loss_t(v.detach(), a.detach(), 0.3).item()
                flat[idx] = orig - h
                lo = ocav.contrastive_loss_t(v.detach(), a.detach(), 0.3).item()
                flat[idx] = orig
                numeric = (hi - lo) / (2 * h)
                analytic = grad.reshape(-1)[idx].item()
                denom = max(abs(numeric), abs(analytic), 1e-8)
                assert abs(numeric - analytic) / denom < 1e-4

    def test_nonfinite_features_rejected(self):
        bad = torch.tensor([[float("nan"), 1.0]])
        with pytest.raises(TrainingDivergedError):
            ocav.contrastive_loss_t(bad, torch.ones(1, 2), 0.1)

    def test_zero_feature_rejected(self):
        with pytest.raises(ValueError):
            ocav.contrastive_loss_t(torch.zeros(2, 3), torch.ones(2, 3), 0.1)


class TestRetrievalAccuracy:
    def test_matched_orthonormal(self):
        eye = np.eye(4)
        assert ocav.retrieval_accuracy(ocav.FeaturePairBatch(eye, eye)) == 1.0

    def test_deranged(self):
        eye = np.eye(4)
        assert ocav.retrieval_accuracy(ocav.FeaturePairBatch(eye, np.roll(eye, 1, axis=0))) == 0.0

    def test_random_matches_chance(self):
        rng = np.random.default_rng(5)
        accs = [
            ocav.retrieval_accuracy(
                ocav.FeaturePairBatch(rng.normal(size=(8, 16)), rng.normal(size=(8, 16)))
            )
            for _ in range(300)
        ]
        assert np.mean(accs) == pytest.approx(1 / 8, abs=0.03)


class TestSampleSyncClip:
    def _triplet(self):
        return make_triplet(t=40, side=24, fps=4.0, sample_rate=16000, seed=3)

    def test_four_second_crop_shapes(self):
        rng = np.random.default_rng(0)
        clip = ocav.sample_sync_clip(self._triplet(), 4.0, rng)
        assert clip.video.t == 16
        assert clip.masks.t == 16
        assert clip.audio.n_samples == 64000

    def test_full_duration_is_identity(self):
        t = self._triplet()
        clip = ocav.sample_sync_clip(t, 10.0, np.random.default_rng(0))
        np.testing.assert_array_equal(clip.video.frames, t.video.frames)
        np.testing.assert_array_equal(clip.audio.samples, t.audio.samples)

    def test_seeded_determinism(self):
        t = self._triplet()
        a = ocav.sample_sync_clip(t, 4.0, np.random.default_rng(9))
        b = ocav.sample_sync_clip(t, 4.0, np.random.default_rng(9))
        assert a.provenance["crop_start_frame"] == b.provenance["crop_start_frame"]
        np.testing.assert_array_equal(a.video.frames, b.video.frames)

    def test_sync_between_modalities(self):
        t = self._triplet()
        clip = ocav.sample_sync_clip(t, 4.0, np.random.default_rng(1))
        s = clip.provenance["crop_start_frame"]
        np.testing.assert_array_equal(clip.video.frames, t.video.frames[s : s + 16])
        np.testing.assert_array_equal(
            clip.audio.samples, t.audio.samples[s * 4000 : s * 4000 + 64000]
        )

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            ocav.sample_sync_clip(make_triplet(t=8, fps=4.0), 4.0, np.random.default_rng(0))


def small_training_set(n_classes=2, per_class=3):
    """In-memory triplets: class = tone frequency + blob position pattern."""
    out = []
    for c in range(n_classes):
        for i in range(per_class):
            rng = np.random.default_rng(100 * c + i)
            t, side, sr, fps = 8, 32, 16000, 4.0
            frames = rng.integers(0, 40, (t, side, side, 3), dtype=np.uint8)
            masks = np.zeros((t, side, side), dtype=np.uint8)
            r = 6 + 2 * c
            for k in range(t):
                cx = 8 + 2 * k if c == 0 else 24 - 2 * k
                masks[k, 10 : 10 + r, max(0, cx - 4) : cx + 4] = 1
                frames[k][masks[k] > 0] = 220 if c == 0 else 60
            n = int(t / fps * sr)
            f0 = 300.0 * (c + 1)
            audio = 0.6 * np.sin(2 * np.pi * f0 * np.arange(n) / sr)
            out.append(
                Triplet(
                    video=VideoClip(frames, fps),
                    masks=MaskTrack(masks),
                    audio=AudioWave(audio, sr),
                    class_text=f"class {c}",
                )
            )
    return out


class TestTrainOcav:
    def test_freezing_contract(self, tmp_path):
        triplets = small_training_set()
        cfg = ocav.OCAVConfig(batch_size=3, steps=3, clip_seconds=1.0, lr=1e-2, seed=0, log_every=1)
        init = checkpoints.state_arrays(build_mve_encoder(TINY_ENC))
        mve, audio_enc, log = ocav.train_ocav(triplets, cfg, TINY_ENC)
        after = checkpoints.state_arrays(mve)
        changed, frozen_same = [], []
        for name, arr in after.items():
            if name.startswith("video_branch.backbone."):
                frozen_same.append(np.array_equal(arr, init[name]))
            else:
                changed.append(not np.array_equal(arr, init[name]))
        assert all(frozen_same)
        assert any(changed)

    def test_zero_steps_equals_init(self, tmp_path):
        triplets = small_training_set(per_class=1)
        cfg = ocav.OCAVConfig(batch_size=2, steps=0, clip_seconds=1.0, seed=0)
        out = tmp_path / "ck.npz"
        ocav.train_ocav(triplets, cfg, TINY_ENC, out_path=out)
        mve, audio_enc, enc_cfg = ocav.load_ocav_checkpoint(out)
        fresh_mve = build_mve_encoder(TINY_ENC)
        fresh_audio = build_audio_encoder(TINY_ENC)
        for k, v in checkpoints.state_arrays(fresh_mve).items():
            np.testing.assert_array_equal(checkpoints.state_arrays(mve)[k], v)
        for k, v in checkpoints.state_arrays(fresh_audio).items():
            np.testing.assert_array_equal(checkpoints.state_arrays(audio_enc)[k], v)

    def test_loss_decreases_and_log_written(self, tmp_path):
        triplets = small_training_set()
        cfg = ocav.OCAVConfig(
            batch_size=4, steps=40, clip_seconds=1.0, lr=3e-3, seed=1, log_every=5
        )
        log_path = tmp_path / "log.jsonl"
        _, _, log = ocav.train_ocav(triplets, cfg, TINY_ENC, log_path=log_path)
        assert log[-1]["loss"] < log[0]["loss"]
        lines = log_path.read_text().strip().splitlines()
        assert len(lines) == len(log)
        assert {"step", "loss", "retrieval_acc"} <= set(log[0])

    def test_checkpoint_roundtrip(self, tmp_path):
        triplets = small_training_set(per_class=1)
        cfg = ocav.OCAVConfig(batch_size=2, steps=2, clip_seconds=1.0, seed=2, log_every=1)
        out = tmp_path / "ck.npz"
        mve, audio_enc, _ = ocav.train_ocav(triplets, cfg, TINY_ENC, out_path=out)
        mve2, audio2, enc_cfg = ocav.load_ocav_checkpoint(out)
        assert enc_cfg == TINY_ENC
        for k, v in checkpoints.state_arrays(mve).items():
            np.testing.assert_array_equal(checkpoints.state_arrays(mve2)[k], v)
