"""Spectral learning of hidden Markov models with projection regularization."""
