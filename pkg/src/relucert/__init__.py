"""Certificate-carrying safety verification of ReLU networks over boxes."""

__version__ = "0.1.0"
