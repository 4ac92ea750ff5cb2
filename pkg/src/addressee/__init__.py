"""Multimodal addressee recognition: saliency, speaker-appearance and utterance streams."""

__version__ = "0.1.0"
