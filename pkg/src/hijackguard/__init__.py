"""Detect hijacks of your own BGP prefixes and answer them with de-aggregation."""

from .prefix import IpPrefix, PrefixTrie, contains, deaggregate, parse_prefix

__version__ = "0.1.0"

__all__ = ["IpPrefix", "PrefixTrie", "contains", "deaggregate", "parse_prefix", "__version__"]
