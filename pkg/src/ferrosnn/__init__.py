"""Device-aware spiking-network training on modeled ferroelectric synapses."""

__version__ = "0.1.0"
