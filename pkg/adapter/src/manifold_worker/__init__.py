"""Objective-evaluation worker speaking newline-delimited JSON.

Each evaluate request carries a per-cycle KL scale schedule; the worker
trains a small joint VAE (continuous + categorical latent) on a configured
dataset subset under that schedule and returns one latent-manifold image
grid per class for the caller to score.
"""

from .config import WorkerConfig, from_dict, merged
from .worker import handle_line, mock_manifolds, serve_stdio, serve_tcp

__version__ = "0.1.0"
