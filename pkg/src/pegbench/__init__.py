"""Desk-scale dual-arm peg insertion benchmark.

Everything in here is deterministic given explicit seeds: the simulator,
the renderer, the variation sampler, the autodiff stack and the trainer.
"""

__version__ = "0.1.0"
