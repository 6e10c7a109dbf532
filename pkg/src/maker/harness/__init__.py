"""Experiment configuration, evaluation and the ablation matrix."""
