"""Clients for the aggregation API."""

from .aggregator_client import AggregatorClient

__all__ = ["AggregatorClient"]
