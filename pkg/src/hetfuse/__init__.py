"""Unify heterogeneous classifiers into one classifier via soft-label fusion."""

__version__ = "0.1.0"
