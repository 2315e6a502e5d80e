"""Differentiable external memory with Lie-group key addressing.

Subpackages cover a small reverse-mode autodiff engine, key-space group
actions (planar shifts, sphere rotations), the weighted key-value store and
its read schemes, LSTM controllers, five encoder-decoder model families,
algorithmic task generators, a training/evaluation harness, and trace/PCA
analysis tools with a command-line front end.
"""

__version__ = "0.1.0"
