"""Dilated residual network, its training loop and weights file format."""
