"""Toolkit for simulating and evaluating natural-language feedback in
interactive text-to-SQL error correction."""

__version__ = "0.1.0"
