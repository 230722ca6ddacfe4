"""W-Net: dense tissue segmentation from ultrasound grey images plus RF waveforms."""

__version__ = "0.1.0"
