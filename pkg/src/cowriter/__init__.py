"""Songwriting copilot: lead sheets, event/control token sequences,
autoregressive models, span-conditioned suggestion engine, HTTP service."""

__version__ = "0.1.0"
