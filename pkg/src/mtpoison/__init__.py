"""Model-targeted poisoning attacks on linear classifiers with certified lower bounds."""

__version__ = "0.1.0"
