"""Meta-Thompson Sampling for waveform-agile radar tracking."""

__version__ = "0.1.0"
