"""Hotel-bathroom image classification with densely connected CNNs in numpy."""

__version__ = "0.1.0"
