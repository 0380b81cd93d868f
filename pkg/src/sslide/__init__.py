"""Sound source localization with a multipath-alleviating encoder-decoder."""

__version__ = "0.1.0"
