"""Synchrony-controlled Hodgkin-Huxley ISI channel and its bits-per-joule optimal input."""

__version__ = "0.1.0"
