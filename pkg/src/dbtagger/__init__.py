"""Schema-aware keyword mapping for natural-language database queries."""

__version__ = "0.1.0"
