"""sceneforge: long-tail driving-scene mining, human review, and
knowledge-retention evaluation."""

__version__ = "0.1.0"
