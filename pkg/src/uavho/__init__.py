"""Explainable DQN handover management for cellular-connected UAVs."""

__version__ = "0.1.0"
