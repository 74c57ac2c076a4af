"""Toolkit for measuring how well language-model surprisal predicts reading times."""

__version__ = "0.1.0"
