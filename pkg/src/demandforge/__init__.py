"""demandforge: per-vehicle traffic demand schedules from noisy, multimodal
intersection counts, refined iteratively from natural-language feedback."""

__version__ = "0.1.0"
