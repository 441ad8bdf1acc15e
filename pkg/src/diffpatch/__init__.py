"""Differentiable multi-patch surface decoders with analytic differential geometry."""

__version__ = "0.1.0"
