"""Multi-modal attention audio captioning at desk scale."""

__version__ = "0.1.0"
