"""Toolkit for blind, randomized evaluation campaigns over manipulation policies."""

__version__ = "0.1.0"
