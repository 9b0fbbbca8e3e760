"""Visual-textual entailment workbench."""

__version__ = "0.1.0"
