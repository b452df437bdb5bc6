"""Fault-tolerant LLM training orchestration against a simulated cluster."""

__version__ = "0.1.0"
