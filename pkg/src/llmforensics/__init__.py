"""Two-stage multimodal-LLM image forensics evaluation harness."""

__version__ = "0.1.0"
