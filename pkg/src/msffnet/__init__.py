"""Two-exposure HDR deghosting with multi-scale feature flow."""

__version__ = "0.1.0"
