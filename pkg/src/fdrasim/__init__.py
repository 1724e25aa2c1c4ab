"""Joint user selection and contiguous RB allocation: JADE, DQN-based STAR, baselines and an exact oracle."""

__version__ = "0.1.0"
