"""Dockless bike-sharing pipeline: trip extraction, abstract stations,
Poisson demand, exact repositioning and an hourly simulator."""

__version__ = "0.1.0"
