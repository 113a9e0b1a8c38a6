"""Decentralized observer-based load-frequency controller synthesis."""

__version__ = "0.1.0"
