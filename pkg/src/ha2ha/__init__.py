"""Self-supervised half-angle denoising for ultrafast Doppler ultrasound RF data."""

__version__ = "0.1.0"
