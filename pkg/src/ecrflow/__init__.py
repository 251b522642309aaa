"""Flows and Bouligand derivatives of event-selected vector fields."""

__version__ = "0.1.0"
