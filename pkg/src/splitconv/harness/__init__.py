"""Desk-scale training and verification harness built on the numpy operators."""

from .model import ModelGraph, build_model, softmax_cross_entropy

__all__ = ["ModelGraph", "build_model", "softmax_cross_entropy"]
