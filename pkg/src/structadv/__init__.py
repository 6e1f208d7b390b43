"""Structural adversarial objectives for GAN discriminators, on a small from-scratch autodiff."""

__version__ = "0.1.0"
