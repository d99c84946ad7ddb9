"""Batch toolkit for detecting On-Task vs. Off-Task student engagement.

Two-phase pipeline: a URL-activity context gate followed by a random-forest
classifier over windowed facial appearance features.
"""

__version__ = "0.1.0"
