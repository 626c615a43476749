"""Machine-learning-assisted AC optimal power flow laboratory."""
__version__ = "0.1.0"
