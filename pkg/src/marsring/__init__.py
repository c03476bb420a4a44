"""Decentralized agent team on a topic bus, with ring auctions for task
allocation, an incrementally maintained shortest-path index, and a
contest-style graph world simulator."""

__version__ = "0.1.0"
