"""Context-specific validation of learned dynamics models by active sampling of control tasks."""

__version__ = "0.1.0"
