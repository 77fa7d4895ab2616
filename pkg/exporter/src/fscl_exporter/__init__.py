"""Teacher-bundle export from pretrained vision-language checkpoints."""

from .export import DEFAULT_PROMPT, ExportManifest, export, resolve_taps

__version__ = "0.1.0"

__all__ = ["DEFAULT_PROMPT", "ExportManifest", "export", "resolve_taps"]
