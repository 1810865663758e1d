"""Exit-time stochastic control: path simulation, BSDE costs, HJB solver and a check harness"""

__version__ = "1.0.0"
