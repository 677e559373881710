"""Batch toolkit for curating solo-piano recordings into a transcription corpus."""

__version__ = "0.1.0"
