"""Potential-flow generators with L2 optimal-transport regularity."""

from . import backprop, generator, graph, losses, nn, problems, trainer

__all__ = ["backprop", "generator", "graph", "losses", "nn", "problems",
           "trainer"]

__version__ = "0.1.0"
