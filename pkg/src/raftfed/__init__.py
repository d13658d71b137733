"""Serverless two-layer federated learning for vehicular networks: elections,
label-overlap clustering, pre-training on shared data and relay training."""

__version__ = "0.1.0"
