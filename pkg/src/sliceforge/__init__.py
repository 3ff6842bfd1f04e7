"""Simulator for threshold-based 5G network-slice admission with a Master fallback slice."""

from .domain import RequestRecord, SliceKind
from .errors import CompatibilityError, ConfigError, DataError, SliceforgeError

__all__ = ["CompatibilityError", "ConfigError", "DataError", "RequestRecord", "SliceKind", "SliceforgeError"]
__version__ = "0.1.0"
