"""Instance-level adversarial denoising for distantly supervised relation extraction."""

__version__ = "0.1.0"
