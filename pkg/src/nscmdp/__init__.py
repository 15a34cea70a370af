"""Online learning in episodic constrained MDPs with corrupted reward and cost sequences."""

__version__ = "0.1.0"
