"""Infer a searcher's target from the error fixations made before they found it.

The package turns a sequence of wrong fixations into a probability map over
the search image (and over object categories) describing what the searcher
was most likely looking for, and ships the null models and scoring tools
needed to say how much better than chance that inference is.
"""

__version__ = "0.1.0"
