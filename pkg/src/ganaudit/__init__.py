"""Audit decoder-based generative models by estimating likelihoods and
projecting samples onto the decoder manifold."""

__version__ = "0.1.0"
