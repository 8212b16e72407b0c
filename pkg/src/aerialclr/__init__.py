"""Contrastive pretraining toolkit for rare-object aerial patch recognition."""

__version__ = "0.1.0"
