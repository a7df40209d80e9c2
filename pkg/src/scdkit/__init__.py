"""Word-level speaker change detection on top of a streaming
Transformer-Transducer ASR, at desk scale."""

__version__ = "0.1.0"
