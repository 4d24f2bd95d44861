"""Usability scoring for synthetic training images and UCB-bandit subset selection."""

__version__ = "0.1.0"
