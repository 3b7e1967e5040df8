"""Care-service selection: risk models plus tree search over service combinations."""

__version__ = "0.1.0"
