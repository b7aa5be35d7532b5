"""Simulation lab for pre-training and fine-tuning in multi-task tabular reinforcement learning."""

__version__ = "0.1.0"
