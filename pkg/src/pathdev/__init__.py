"""Trainable path development layers on matrix Lie groups."""
