"""clickfoley: interactive object-specific video-to-audio generation.

Click an object in a video, propagate its mask through time, and sample a
mel spectrogram for it from a conditional latent diffusion model trained
with mask-gated contrastive audio-visual features.
"""

__version__ = "0.1.0"
