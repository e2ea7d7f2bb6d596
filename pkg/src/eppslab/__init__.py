"""Cross-correlation of high-frequency returns under momentum trading.

Closed-form Gaussian model, exact path samplers, a three-agent discrete
market simulation and an empirical Epps-curve pipeline.
"""

__version__ = "0.1.0"
