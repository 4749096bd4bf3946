"""Self-supervised representation learning with mined nearby views, for binned neural activity."""

__version__ = "0.1.0"
