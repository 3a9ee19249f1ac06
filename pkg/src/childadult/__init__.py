"""Contrastive pre-training and child/adult segment classification."""

__version__ = "0.1.0"
