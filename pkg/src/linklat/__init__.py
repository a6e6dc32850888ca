"""Link occupancy and flow latency prediction from queueing features."""

__version__ = "0.1.0"
