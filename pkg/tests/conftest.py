import numpy as np
import pytest

from clickfoley import dataset
from clickfoley.media import AudioWave, VideoClip
from clickfoley.segmentation import MaskTrack


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 classes x 3 samples, 5 s each; small but fully real store layout."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    return dataset.generate_toy_corpus(3, 3, seed=7, out_dir=root, duration=5.0)


@pytest.fixture(scope="session")
def tiny_ckpt_dir(tmp_path_factory):
    """Untrained but loadable checkpoints at test scale (d=16)."""
    from clickfoley import diffusion
    from clickfoley.encoders import EncoderConfig, build_audio_encoder, build_mve_encoder
    from clickfoley.ocav import save_ocav_checkpoint

    root = tmp_path_factory.mktemp("ckpts")
    enc_cfg = EncoderConfig(
        d=16, video_channels=4, mask_channels=3, audio_channels=4, spatial_pool=4, seed=0
    )
    save_ocav_checkpoint(root / "ocav.npz", build_mve_encoder(enc_cfg),
                         build_audio_encoder(enc_cfg), enc_cfg)
    ldm_cfg = diffusion.LdmConfig(
        ae_channels=4, denoiser_channels=8, cond_dim=16, time_dim=16, t_steps=100, seed=0
    )
    diffusion.save_ldm_checkpoint(root / "ldm.npz", diffusion.build_ldm(ldm_cfg))
    return root


def make_triplet(t=8, side=16, fps=4.0, sample_rate=4000, seed=0, blob=True):
    """Small in-memory triplet for shape-level tests."""
    rng = np.random.default_rng(seed)
    frames = rng.integers(0, 256, (t, side, side, 3), dtype=np.uint8)
    masks = np.zeros((t, side, side), dtype=np.uint8)
    if blob:
        for k in range(t):
            masks[k, 4 : 4 + 2 + k % 3, 5 : 5 + 3] = 1
    n = int(t / fps * sample_rate)
    audio = 0.5 * np.sin(2 * np.pi * 440.0 * np.arange(n) / sample_rate)
    return dataset.Triplet(
        video=VideoClip(frames, fps),
        masks=MaskTrack(masks),
        audio=AudioWave(audio, sample_rate),
        class_text="fixture",
    )
