"""Camera pose auto-encoders and PAE-based relative pose refinement on synthetic scenes."""
__version__ = "0.1.0"
