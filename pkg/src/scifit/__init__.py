"""Research-system Fitness of geographic areas from citation networks."""

__version__ = "0.1.0"
