"""Integrated-information complexity measures on discrete Markov systems."""

__version__ = "0.1.0"
