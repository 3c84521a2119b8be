"""fed-dpgan aggregation API."""

from .main import app

__all__ = ["app"]
