"""Hybrid global/local navigation stack.

Grid-based global planning feeds distance-spaced checkpoints into an
attention-based value-learning local policy; the package also ships the
crowd simulator, reward engine, training loop and evaluation harness
needed to run the full pipeline on a workstation.
"""

__version__ = "0.1.0"
