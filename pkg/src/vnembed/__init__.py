"""Virtual network embedding: path generation, an optimal link-based MILP, and a greedy baseline."""

__version__ = "0.1.0"
