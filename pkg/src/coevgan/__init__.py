"""Spatially distributed coevolutionary GAN training with per-cell data subsampling
and evolved generator-mixture weights, at desk scale."""

__version__ = "0.1.0"
