"""Desk-scale coupled cyclist/vehicle-in-the-loop simulation testbed."""

__version__ = "0.1.0"
