"""Replication pricing of uncollateralized derivatives with CVA, DVA and a basis-driven FVA."""

__version__ = "0.1.0"
